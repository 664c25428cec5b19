"""The five flow-model variants and their effective velocity on R^N.

Every gauge variant evaluates

    v_eff(x, t) = v_main(x, t) - alpha(x, t) * sum_k A_k(x, t)[T(x, t)] d^k

where ``A_k`` carries k spatial indices plus one so(N) index, ``d`` is the
unit-normalized auxiliary velocity and ``T`` is either the auxiliary velocity
itself or a rank <= 2 polynomial in it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .algebra import SkewBasis, algebra_dim, lie_action, so_basis, tensor_contract
from .errors import ConfigError, NumericError, ShapeError
from .nn import Mlp, ParamStore, mlp_param_count

__all__ = [
    "VariantKind",
    "Widths",
    "TgfmModel",
    "Fields",
    "build_model",
    "model_param_count",
    "match_parameters",
    "t_hat",
    "gauge_correction",
    "effective_velocity",
    "gauge_matrix",
]

HIDDEN_LAYERS = 2
DIRECTION_EPS = 1e-8


class VariantKind(str, enum.Enum):
    PlainVF = "PlainVF"
    GaugeFlow = "GaugeFlow"
    TensorVFPlainGauge = "TensorVFPlainGauge"
    PlainVFTensorGauge = "PlainVFTensorGauge"
    TensorVFTensorGauge = "TensorVFTensorGauge"

    @property
    def has_gauge(self) -> bool:
        return self is not VariantKind.PlainVF

    @property
    def tensor_vf(self) -> bool:
        return self in (VariantKind.TensorVFPlainGauge, VariantKind.TensorVFTensorGauge)

    @property
    def gauge_ranks(self) -> tuple[int, ...]:
        if not self.has_gauge:
            return ()
        if self in (VariantKind.PlainVFTensorGauge, VariantKind.TensorVFTensorGauge):
            return (1, 2, 3)
        return (1,)

    @property
    def t_hat_ranks(self) -> tuple[int, ...]:
        return (1, 2) if self.tensor_vf else ()

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value: "str | VariantKind") -> "VariantKind":
        if isinstance(value, VariantKind):
            return value
        for kind in cls:
            if value in (kind.value, kind.name, kind.label):
                return kind
        raise ConfigError(f"unknown variant {value!r}; expected one of {[k.value for k in cls]}")


_LABELS = {
    VariantKind.PlainVF: "PlainVF",
    VariantKind.GaugeFlow: "Gauge Flow",
    VariantKind.TensorVFPlainGauge: "TensorVF + Plain Gauge",
    VariantKind.PlainVFTensorGauge: "PlainVF + Tensor Gauge",
    VariantKind.TensorVFTensorGauge: "TensorVF + Tensor Gauge",
}

REFERENCE_VARIANT = VariantKind.PlainVFTensorGauge


@dataclass(frozen=True)
class Widths:
    """Hidden widths: ``main`` for v_main, ``aux`` shared by every other net."""

    main: int
    aux: int = 0


def _net_sizes(kind: VariantKind, n: int, widths: Widths, hidden_layers: int) -> dict[str, tuple[int, ...]]:
    d = algebra_dim(n)

    def sizes(width: int, out: int) -> tuple[int, ...]:
        return (n + 1,) + (width,) * hidden_layers + (out,)

    nets = {"v_main": sizes(widths.main, n)}
    if kind.has_gauge:
        nets["v_aux"] = sizes(widths.aux, n)
        nets["alpha"] = sizes(widths.aux, 1)
        nets["gauge"] = sizes(widths.aux, sum(n**k * d for k in kind.gauge_ranks))
    if kind.tensor_vf:
        nets["t_hat"] = sizes(widths.aux, sum(n**k * n for k in kind.t_hat_ranks))
    return nets


def model_param_count(kind: VariantKind, n: int, widths: Widths, hidden_layers: int = HIDDEN_LAYERS) -> int:
    return sum(mlp_param_count(s) for s in _net_sizes(kind, n, widths, hidden_layers).values())


@dataclass
class Fields:
    """All intermediate fields of one batched forward pass (Vars)."""

    v_main: ad.Var
    v_aux: ad.Var | None = None
    direction: ad.Var | None = None
    t_hat: ad.Var | None = None
    alpha: ad.Var | None = None
    gauge_raw: dict[int, ad.Var] | None = None
    gauge_scalars: dict[int, ad.Var] | None = None
    correction: ad.Var | None = None
    velocity: ad.Var | None = None


class TgfmModel:
    """A variant with its networks and parameters.

    Sub-networks: ``v_main`` (always); ``v_aux``, ``alpha`` and ``gauge``
    (gauge variants; the gauge trunk has one linear head per rank);
    ``t_hat`` (tensor-VF variants).
    """

    def __init__(
        self,
        kind: VariantKind,
        n: int,
        widths: Widths,
        seed: int = 0,
        hidden_layers: int = HIDDEN_LAYERS,
    ) -> None:
        kind = VariantKind.parse(kind)
        if n < 1:
            raise ConfigError(f"dimension must be >= 1, got {n}")
        if kind.has_gauge and n < 2:
            raise ConfigError("gauge variants need N >= 2 (so(1) is trivial)")
        self.kind = kind
        self.n = n
        self.widths = widths
        self.seed = seed
        self.hidden_layers = hidden_layers
        self.basis: SkewBasis = so_basis(n)
        self.store = ParamStore()
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x1A17])))
        self.nets: dict[str, Mlp] = {
            name: Mlp.create(self.store, name, sizes, rng)
            for name, sizes in _net_sizes(kind, n, widths, hidden_layers).items()
        }

    def __repr__(self) -> str:
        return f"TgfmModel({self.kind.value}, N={self.n}, widths={self.widths}, params={self.param_count()})"

    def param_count(self) -> int:
        return self.store.count()

    # -- batched forward -------------------------------------------------------

    def _heads(self, raw: ad.Var, ranks: tuple[int, ...], last: int) -> dict[int, ad.Var]:
        batch, n = raw.shape[0], self.n
        out, lo = {}, 0
        for k in ranks:
            hi = lo + n**k * last
            out[k] = raw[:, lo:hi].reshape((batch,) + (n,) * k + (last,))
            lo = hi
        return out

    def forward(self, params: Mapping[str, ad.Var | np.ndarray], x, t) -> Fields:
        """Batched forward on x (B, N) and t (B, 1)."""
        x, t = ad.as_var(x), ad.as_var(t)
        inp = ad.concat([x, t], axis=1)
        v_main = self.nets["v_main"](params, inp)
        if not self.kind.has_gauge:
            return Fields(v_main=v_main, velocity=v_main)

        n, dim_a = self.n, self.basis.count
        v_aux = self.nets["v_aux"](params, inp)
        norm = ad.norm(v_aux, axis=-1)
        small = (norm.value < DIRECTION_EPS).astype(np.float64)
        scale = (1.0 - small) / (norm + small)
        direction = v_aux * scale.reshape((-1, 1))

        if self.kind.tensor_vf:
            t_heads = self._heads(self.nets["t_hat"](params, inp), self.kind.t_hat_ranks, n)
            that = None
            for k, coeffs in t_heads.items():
                term = tensor_contract(coeffs, [v_aux] * k)
                that = term if that is None else that + term
        else:
            that = v_aux

        raw = self._heads(self.nets["gauge"](params, inp), self.kind.gauge_ranks, dim_a)
        scalars = {k: tensor_contract(a_k, [direction] * k) for k, a_k in raw.items()}
        total = None
        for s in scalars.values():
            total = s if total is None else total + s
        alpha = self.nets["alpha"](params, inp)
        correction = alpha * lie_action(total, self.basis, that)
        return Fields(
            v_main=v_main,
            v_aux=v_aux,
            direction=direction,
            t_hat=that,
            alpha=alpha,
            gauge_raw=raw,
            gauge_scalars=scalars,
            correction=correction,
            velocity=v_main - correction,
        )

    def gauge_matrix_var(self, fields: Fields) -> ad.Var:
        """(B, N, N) so(N) matrix built from the rank-1 gauge coefficients."""
        s1 = fields.gauge_scalars[1]
        return (s1 @ self.basis.flat).reshape((s1.shape[0], self.n, self.n))

    # -- point evaluation --------------------------------------------------------

    def _batch(self, x, t) -> tuple[np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n or x.ndim not in (1, 2):
            raise ShapeError(f"expected state of shape (N,) or (B, N) with N={self.n}, got {x.shape}")
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        tb = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (xb.shape[0], 1)).copy()
        if not np.all(np.isfinite(xb)):
            raise NumericError("non-finite state")
        if not np.all(np.isfinite(tb)):
            raise NumericError("non-finite time")
        return xb, tb, single

    def evaluate(self, x, t) -> tuple[Fields, bool]:
        xb, tb, single = self._batch(x, t)
        with ad.no_grad(), np.errstate(all="ignore"):
            fields = self.forward(self.store.constants(), xb, tb)
        for name in ("v_main", "v_aux", "alpha", "t_hat", "correction"):
            val = getattr(fields, name)
            if val is not None and not np.all(np.isfinite(val.value)):
                net = "gauge" if name == "correction" else name
                raise NumericError(f"non-finite output from sub-network {net!r}")
        return fields, single

    def effective_velocity(self, x, t) -> np.ndarray:
        fields, single = self.evaluate(x, t)
        out = fields.velocity.value
        return out[0] if single else out

    def t_hat(self, x, t) -> np.ndarray:
        if not self.kind.has_gauge:
            raise ConfigError(f"{self.kind.value} has no tensor field")
        fields, single = self.evaluate(x, t)
        out = fields.t_hat.value
        return out[0] if single else out

    def gauge_correction(self, x, t) -> np.ndarray:
        if not self.kind.has_gauge:
            raise ConfigError(f"{self.kind.value} has no gauge correction")
        fields, single = self.evaluate(x, t)
        out = fields.correction.value
        return out[0] if single else out

    def gauge_matrix(self, x, t) -> np.ndarray:
        if not self.kind.has_gauge:
            raise ConfigError(f"{self.kind.value} has no gauge field")
        fields, single = self.evaluate(x, t)
        with ad.no_grad():
            out = self.gauge_matrix_var(fields).value
        return out[0] if single else out

    def __call__(self, x, t) -> np.ndarray:
        return self.effective_velocity(x, t)


def build_model(kind, n: int, budget: int | None = None, widths: Widths | None = None, seed: int = 0, **kw) -> TgfmModel:
    kind = VariantKind.parse(kind)
    if widths is None:
        if budget is None:
            raise ConfigError("either budget or widths is required")
        widths = match_parameters(budget, kind, n, **kw)
    return TgfmModel(kind, n, widths, seed=seed)


def t_hat(model: TgfmModel, x, t) -> np.ndarray:
    return model.t_hat(x, t)


def gauge_correction(model: TgfmModel, x, t) -> np.ndarray:
    return model.gauge_correction(x, t)


def effective_velocity(model: TgfmModel, x, t) -> np.ndarray:
    return model.effective_velocity(x, t)


def gauge_matrix(model: TgfmModel, x, t) -> np.ndarray:
    return model.gauge_matrix(x, t)


# -- parameter matching ---------------------------------------------------------

WIDTH_STEP = 4
MAX_WIDTH = 4096


def match_parameters(
    target_budget: int,
    kind,
    n: int,
    aux_share: float = 0.5,
    tolerance: float = 0.1,
    hidden_layers: int = HIDDEN_LAYERS,
) -> Widths:
    """Hidden widths whose total parameter count lies within ``tolerance`` of the budget.

    Auxiliary nets first take the largest width (multiple of 4, at least 4)
    whose cost fits in ``aux_share`` of the budget; ``v_main`` then takes the
    largest width whose total is within tolerance.  PlainVF has no auxiliary
    nets and spends the whole budget on ``v_main``.
    """
    kind = VariantKind.parse(kind)
    lo, hi = (1.0 - tolerance) * target_budget, (1.0 + tolerance) * target_budget
    aux = 0
    if kind.has_gauge:
        aux = WIDTH_STEP
        w = WIDTH_STEP
        while w <= MAX_WIDTH:
            cost = model_param_count(kind, n, Widths(0, w), hidden_layers) - _main_cost(n, 0, hidden_layers)
            if cost > aux_share * target_budget:
                break
            aux = w
            w += WIDTH_STEP
    best = None
    w = WIDTH_STEP
    while w <= MAX_WIDTH:
        total = model_param_count(kind, n, Widths(w, aux), hidden_layers)
        if total > hi:
            break
        if total >= lo:
            best = w
        w += WIDTH_STEP
    if best is None:
        raise ConfigError(
            f"no widths put {kind.value} (N={n}) within {tolerance:.0%} of {target_budget} parameters"
        )
    return Widths(best, aux)


def _main_cost(n: int, width: int, hidden_layers: int) -> int:
    return mlp_param_count((n + 1,) + (width,) * hidden_layers + (n,))
