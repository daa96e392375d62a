"""Exception hierarchy.

Each family maps to one CLI exit code: input/format problems exit 2,
domain problems (nothing to work with) exit 3, shape/config problems exit 4.
"""


class RetexError(Exception):
    exit_code = 1


class InputError(RetexError, ValueError):
    exit_code = 2


class MeshError(InputError):
    pass


class ClipFormatError(InputError):
    pass


class TensorFormatError(InputError):
    pass


class DomainError(RetexError, ValueError):
    exit_code = 3


class SparseReferenceError(DomainError):
    pass


class EmptyRegionError(DomainError):
    pass


class ShapeError(RetexError, ValueError):
    exit_code = 4


class ConfigError(ShapeError):
    pass


class RenderError(ShapeError):
    pass
