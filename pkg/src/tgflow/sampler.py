"""Fixed-step ODE integration of trained flows, evaluation metrics and normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, NumericError, ReportError
from .models import REFERENCE_VARIANT, VariantKind
from .training import test_loss

__all__ = [
    "IntegratorSpec",
    "integrate",
    "evaluate",
    "normalize_report",
    "nearest_mean_distance",
]

Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class IntegratorSpec:
    method: str = "rk4"
    steps: int = 100

    def __post_init__(self) -> None:
        if self.method not in ("euler", "rk4"):
            raise ConfigError(f"unknown integrator {self.method!r}")
        if self.steps < 1:
            raise ConfigError(f"integrator steps must be >= 1, got {self.steps}")


def _as_field(model) -> Field:
    if hasattr(model, "effective_velocity"):
        return model.effective_velocity
    return model


def integrate(model, x0, spec: IntegratorSpec = IntegratorSpec()) -> np.ndarray:
    """Integrate dx/dt = v(x, t) from t = 0 to t = 1; x0 may be (N,) or (B, N)."""
    f = _as_field(model)
    x = np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite initial state")
    h = 1.0 / spec.steps
    for i in range(spec.steps):
        t = i * h
        if spec.method == "euler":
            x = x + h * f(x, t)
        else:
            k1 = f(x, t)
            k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state after integration step {i + 1}")
    return x


def evaluate(model, test_x: np.ndarray, eval_seed: int) -> dict:
    return {
        "fm_test_loss": test_loss(model, test_x, eval_seed),
        "param_count": int(model.param_count()),
    }


def nearest_mean_distance(samples: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Distance from every sample to its closest mixture mean (diagnostic only)."""
    samples = np.atleast_2d(samples)
    out = np.empty(samples.shape[0])
    for lo in range(0, samples.shape[0], 1024):
        block = samples[lo:lo + 1024]
        d2 = ((block[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
        out[lo:lo + 1024] = np.sqrt(d2.min(axis=1))
    return out


def normalize_report(
    losses: Mapping[tuple[int, str], float] | Iterable[Mapping],
    reference=REFERENCE_VARIANT,
) -> dict[tuple[int, str], float]:
    """Divide each (N, variant) loss by the reference variant's loss at the same N.

    Accepts a mapping ``{(N, variant): loss}`` or records with keys
    ``n``, ``variant`` and ``loss``.
    """
    if not isinstance(losses, Mapping):
        losses = {(int(r["n"]), str(r["variant"])): float(r["loss"]) for r in losses}
    ref = VariantKind.parse(reference).value
    table = {(int(n), VariantKind.parse(v).value): float(x) for (n, v), x in losses.items()}
    out = {}
    for (n, variant), value in sorted(table.items()):
        if (n, ref) not in table:
            raise ReportError(f"missing reference cell {ref} for N={n}")
        denom = table[(n, ref)]
        out[(n, variant)] = 1.0 if variant == ref else value / denom
    return out
