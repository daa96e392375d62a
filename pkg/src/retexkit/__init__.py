"""Data, conditioning and evaluation tooling for reference-driven video retexturing."""

__version__ = "0.1.0"
