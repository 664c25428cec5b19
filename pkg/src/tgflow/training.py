"""Conditional flow matching with the gauge regularizers, and the training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .dataset import stream
from .errors import ConfigError, NumericError
from .models import TgfmModel
from .nn import adamw_step, clip_global_norm, grad_params

__all__ = [
    "TrainConfig",
    "CfmSample",
    "LossTerms",
    "cfm_pair",
    "draw_batch",
    "loss_terms",
    "fm_loss",
    "gauge_norm_reg",
    "consistency_reg",
    "total_loss",
    "frozen_eval_draws",
    "test_loss",
    "train",
]

log = logging.getLogger(__name__)

EVAL_STREAM = 0xE7A1
EVAL_CHUNK = 4096


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 256
    epochs: int = 180
    clip_norm: float = 1.0
    lambda_a: float = 1e-5
    lambda_cons: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_seed: int = 12345

    def __post_init__(self) -> None:
        for name in ("lr", "weight_decay", "clip_norm", "lambda_a", "lambda_cons", "eps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"train.{name} must be finite and >= 0, got {value}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train.beta1 and train.beta2 must lie in [0, 1)")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CfmSample:
    """Straight-line conditional path; arrays may carry a leading batch axis."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    u_t: np.ndarray

    def __len__(self) -> int:
        return 1 if self.x_t.ndim == 1 else self.x_t.shape[0]

    def batched(self) -> "CfmSample":
        if self.x_t.ndim == 2:
            return self
        return CfmSample(
            self.x0[None], self.x1[None], np.atleast_1d(self.t), self.x_t[None], self.u_t[None]
        )


def cfm_pair(x0, x1, t) -> CfmSample:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    tt = t[..., None] if x1.ndim > t.ndim else t
    return CfmSample(x0, x1, t, tt * x1 + (1.0 - tt) * x0, x1 - x0)


def draw_batch(x1: np.ndarray, rng: np.random.Generator) -> CfmSample:
    """Fresh t ~ U(0, 1) and x0 ~ N(0, I) for a batch of data points."""
    t = rng.random(x1.shape[0])
    x0 = rng.standard_normal(x1.shape)
    return cfm_pair(x0, x1, t)


@dataclass
class LossTerms:
    fm: ad.Var
    gauge_norm: ad.Var
    consistency: ad.Var
    total: ad.Var


def loss_terms(
    model: TgfmModel,
    params: Mapping[str, ad.Var | np.ndarray],
    batch: CfmSample,
    lambda_a: float = 0.0,
    lambda_cons: float = 0.0,
    with_regularizers: bool = True,
) -> LossTerms:
    """All loss terms for one batch as Vars, sharing one forward pass."""
    batch = batch.batched()
    zero = ad.constant(0.0)
    want_cons = with_regularizers and model.kind.has_gauge
    if want_cons:
        x = ad.leaf(batch.x_t)
        t = ad.leaf(batch.t.reshape(-1, 1))
    else:
        x = ad.constant(batch.x_t)
        t = ad.constant(batch.t.reshape(-1, 1))
    fields_ = model.forward(params, x, t)
    resid = fields_.velocity - batch.u_t
    fm = (resid * resid).sum(axis=1).mean()
    reg_a = reg_cons = zero
    if want_cons:
        mat = model.gauge_matrix_var(fields_)
        reg_a = (mat * mat).sum(axis=(1, 2)).mean()
        s = fields_.gauge_raw[1].sum()
        nested = any(isinstance(p, ad.Var) and p.requires_grad for p in params.values())
        gx, gt = ad.grad(s, [x, t], create_graph=nested)
        gx, gt = ad.as_var(gx), ad.as_var(gt)
        reg_cons = (ad.norm(gx, axis=1) + ad.absolute(gt[:, 0])).mean()
    total = fm
    if lambda_a:
        total = total + lambda_a * reg_a
    if lambda_cons:
        total = total + lambda_cons * reg_cons
    return LossTerms(fm, reg_a, reg_cons, total)


def _evaluate(model: TgfmModel, batch: CfmSample, **kw) -> LossTerms:
    # Parameters enter as constants; only the input-gradient graph is recorded.
    return loss_terms(model, model.store.constants(), batch, **kw)


def fm_loss(model: TgfmModel, batch: CfmSample) -> float:
    """Mean squared residual of the effective velocity against u_t."""
    return float(_evaluate(model, batch, with_regularizers=False).fm.value)


def gauge_norm_reg(model: TgfmModel, batch: CfmSample) -> float:
    """Mean squared Frobenius norm of the so(N) matrix field; 0 for PlainVF."""
    if not model.kind.has_gauge:
        return 0.0
    return float(_evaluate(model, batch).gauge_norm.value)


def consistency_reg(model: TgfmModel, batch: CfmSample) -> float:
    """Mean of |grad_x s| + |d_t s| with s the sum of rank-1 gauge coefficients; 0 for PlainVF."""
    if not model.kind.has_gauge:
        return 0.0
    return float(_evaluate(model, batch).consistency.value)


def total_loss(model: TgfmModel, batch: CfmSample, cfg: TrainConfig) -> float:
    terms = _evaluate(model, batch, lambda_a=cfg.lambda_a, lambda_cons=cfg.lambda_cons)
    return float(terms.total.value)


def frozen_eval_draws(count: int, n: int, eval_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (t, x0) draws so every model is scored against the same noise."""
    rng = stream(eval_seed, EVAL_STREAM)
    return rng.random(count), rng.standard_normal((count, n))


def test_loss(model: TgfmModel, x1: np.ndarray, eval_seed: int) -> float:
    """FM loss over a data split with frozen evaluation draws."""
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.shape[0] == 0:
        return float("nan")
    t, x0 = frozen_eval_draws(x1.shape[0], x1.shape[1], eval_seed)
    total = 0.0
    for lo in range(0, x1.shape[0], EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, x1.shape[0])
        batch = cfm_pair(x0[lo:hi], x1[lo:hi], t[lo:hi])
        total += fm_loss(model, batch) * (hi - lo)
    return total / x1.shape[0]


test_loss.__test__ = False  # not a pytest test


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return stream((seed, epoch), 2)


def train(
    model: TgfmModel,
    train_x: np.ndarray,
    test_x: np.ndarray,
    cfg: TrainConfig,
    start_epoch: int = 0,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Run epochs ``start_epoch+1 .. cfg.epochs``; returns one log row per epoch.

    Each epoch's shuffling and (t, x0) draws come from a stream keyed on
    (seed, epoch), so a run resumed from a checkpoint at an epoch boundary
    continues with exactly the trajectory of an uninterrupted run.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    store = model.store
    n_train = train_x.shape[0]
    rows: list[dict] = []
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        started = time.perf_counter()
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(n_train)
        totals, fms, n_seen = 0.0, 0.0, 0
        for b, lo in enumerate(range(0, n_train, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            batch = draw_batch(train_x[idx], rng)
            captured: dict[str, float] = {}

            def objective(params, batch=batch, captured=captured):
                terms = loss_terms(
                    model, params, batch, lambda_a=cfg.lambda_a, lambda_cons=cfg.lambda_cons
                )
                captured["fm"] = float(terms.fm.value)
                return terms.total

            value = grad_params(store, objective)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            clip_global_norm(store, cfg.clip_norm)
            try:
                adamw_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            totals += value * len(idx)
            fms += captured["fm"] * len(idx)
            n_seen += len(idx)
        row = {
            "epoch": epoch,
            "train_loss": totals / max(n_seen, 1),
            "train_fm_loss": fms / max(n_seen, 1),
            "test_loss": test_loss(model, test_x, cfg.eval_seed),
            "seconds": time.perf_counter() - started,
        }
        if not math.isfinite(row["test_loss"]) and len(test_x):
            raise NumericError(f"non-finite test loss at epoch {epoch}")
        log.debug("epoch %d train %.6g test %.6g", epoch, row["train_loss"], row["test_loss"])
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return rows
