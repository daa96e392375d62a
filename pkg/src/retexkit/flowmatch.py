"""Flow-matching kernels on plain numpy arrays.

Time runs from data (t=0) to noise (t=1); sampling integrates t from 1 down to 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_CFG_SCALE = 1.5
DISTILLED_STEPS = 3
TEACHER_STEPS = 50

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class FMPoint:
    z0: np.ndarray
    eps: np.ndarray
    t: float

    def __post_init__(self):
        _pair(self.z0, self.eps, "FMPoint")
        if not 0.0 <= self.t <= 1.0:
            raise ConfigError(f"t must lie in [0, 1], got {self.t}")


def sample_point(z0: np.ndarray, rng: np.random.Generator) -> FMPoint:
    """Draw t ~ U(0, 1) and Gaussian noise shaped like ``z0``."""
    z0 = np.asarray(z0, dtype=np.float64)
    return FMPoint(z0, rng.standard_normal(z0.shape), float(rng.uniform()))


def interpolate(p: FMPoint) -> np.ndarray:
    z0, eps = _pair(p.z0, p.eps, "interpolate")
    return (1.0 - p.t) * z0 + p.t * eps


def target_velocity(z0, eps) -> np.ndarray:
    z0, eps = _pair(z0, eps, "target_velocity")
    return eps - z0


def fm_loss(v_pred, v_star) -> float:
    """Mean squared error over every element."""
    v_pred, v_star = _pair(v_pred, v_star, "fm_loss")
    if v_pred.size == 0:
        raise ShapeError("fm_loss of an empty tensor")
    return float(np.mean((v_pred - v_star) ** 2))


def fm_loss_grad(v_pred, v_star) -> np.ndarray:
    v_pred, v_star = _pair(v_pred, v_star, "fm_loss_grad")
    if v_pred.size == 0:
        raise ShapeError("fm_loss_grad of an empty tensor")
    return 2.0 * (v_pred - v_star) / v_pred.size


def cfg_combine(v_uncond, v_cond, scale: float = DEFAULT_CFG_SCALE) -> np.ndarray:
    """Guided velocity v_u + scale * (v_c - v_u).

    Evaluated as (1 - scale) * v_u + scale * v_c so scales 0 and 1 return the
    unconditional / conditional input bit-for-bit.
    """
    v_uncond, v_cond = _pair(v_uncond, v_cond, "cfg_combine")
    return (1.0 - scale) * v_uncond + scale * v_cond


def euler_sample(velocity_fn: VelocityFn, z_start, steps: int = DISTILLED_STEPS,
                 t_start: float = 1.0, t_end: float = 0.0,
                 timesteps: Sequence[float] | None = None) -> np.ndarray:
    """Explicit Euler integration of dz/dt = velocity_fn(z, t).

    ``timesteps`` overrides the uniform grid with custom knots (first = start).
    """
    z = np.array(z_start, dtype=np.float64)
    if timesteps is None:
        if steps < 1:
            raise ConfigError("steps must be >= 1")
        dt = (t_end - t_start) / steps
        knots = [(t_start + i * dt, dt) for i in range(steps)]
    else:
        ts = [float(t) for t in timesteps]
        if len(ts) < 2:
            raise ConfigError("custom timesteps need at least two knots")
        knots = [(ts[i], ts[i + 1] - ts[i]) for i in range(len(ts) - 1)]
    for t, dt in knots:
        v = np.asarray(velocity_fn(z, t), dtype=np.float64)
        if v.shape != z.shape:
            raise ShapeError(f"velocity_fn returned shape {v.shape}, expected {z.shape}")
        z = z + dt * v
    return z


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_invariant_suite(seed: int = 0, steps: Sequence[int] = (1, DISTILLED_STEPS, TEACHER_STEPS),
                        shape: tuple[int, ...] = (2, 3, 4, 5), trials: int = 8,
                        velocity_fault: float = 0.0) -> list[CheckResult]:
    """Randomised check of the algebraic identities of the linear path.

    ``velocity_fault`` perturbs the velocity used by the round-trip check; any
    nonzero value must make that check fail.
    """
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def record(name, ok, detail):
        results.append(CheckResult(name, bool(ok), detail))

    worst = {"endpoints": 0.0, "consistency": 0.0, "cfg": 0.0, "grad": 0.0}
    roundtrip = {s: 0.0 for s in steps}
    loss_ok = True
    for _ in range(trials):
        z0 = rng.standard_normal(shape)
        eps = rng.standard_normal(shape)
        t = float(rng.uniform())
        v = target_velocity(z0, eps)

        e0 = np.abs(interpolate(FMPoint(z0, eps, 0.0)) - z0).max()
        e1 = np.abs(interpolate(FMPoint(z0, eps, 1.0)) - eps).max()
        worst["endpoints"] = max(worst["endpoints"], e0, e1)

        zt = interpolate(FMPoint(z0, eps, t))
        c = max(np.abs(zt + (1 - t) * v - eps).max(), np.abs(zt - t * v - z0).max())
        worst["consistency"] = max(worst["consistency"], c)

        vu, vc = rng.standard_normal(shape), rng.standard_normal(shape)
        worst["cfg"] = max(worst["cfg"], np.abs(cfg_combine(vu, vc, 1.0) - vc).max(),
                           np.abs(cfg_combine(vu, vc, 0.0) - vu).max())

        def field(z, t, v=v):
            return v + velocity_fault
        for s in steps:
            out = euler_sample(field, eps, steps=s)
            roundtrip[s] = max(roundtrip[s], np.abs(out - z0).max())

        pred = v + rng.standard_normal(shape)
        loss_ok &= fm_loss(pred, v) > 0 and fm_loss(v, v) == 0.0
        worst["grad"] = max(worst["grad"], _grad_check(pred, v, rng))

    record("endpoint identities", worst["endpoints"] == 0.0,
           f"max error {worst['endpoints']:.3g} (must be exact)")
    record("path/velocity consistency", worst["consistency"] < 1e-12,
           f"max error {worst['consistency']:.3g} < 1e-12")
    record("cfg scale 1 and 0", worst["cfg"] == 0.0, f"max error {worst['cfg']:.3g} (exact)")
    for s in steps:
        record(f"euler round trip, {s} steps", roundtrip[s] < 1e-12,
               f"max error {roundtrip[s]:.3g} < 1e-12")
    record("loss non-negative, zero iff equal", loss_ok, "")
    record("loss gradient vs central differences", worst["grad"] < 1e-6,
           f"max rel error {worst['grad']:.3g} < 1e-6")
    return results


def _grad_check(pred: np.ndarray, star: np.ndarray, rng: np.random.Generator,
                probes: int = 6, h: float = 1e-4) -> float:
    analytic = fm_loss_grad(pred, star)
    worst = 0.0
    flat = pred.reshape(-1)
    for idx in rng.choice(flat.size, size=min(probes, flat.size), replace=False):
        plus, minus = flat.copy(), flat.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric = (fm_loss(plus.reshape(pred.shape), star)
                   - fm_loss(minus.reshape(pred.shape), star)) / (2 * h)
        a = analytic.reshape(-1)[idx]
        worst = max(worst, abs(numeric - a) / max(abs(a), 1e-300))
    return worst
