"""Parameters, SiLU MLPs, AdamW and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import NumericError, ShapeError

__all__ = [
    "ParamStore",
    "Mlp",
    "mlp_param_count",
    "grad_params",
    "grad_input",
    "adamw_step",
    "clip_global_norm",
]


class ParamStore:
    """Ordered named float64 arrays with gradient slots and AdamW moments."""

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        self._m[name] = np.zeros_like(value)
        self._v[name] = np.zeros_like(value)

    def names(self) -> list[str]:
        return list(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        old = self._values[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != old.shape:
            raise ShapeError(f"{name}: shape {value.shape} != {old.shape}")
        old[...] = value

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def count(self) -> int:
        return sum(v.size for v in self._values.values())

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def accumulate(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            self._grads[name] += g

    def leaves(self) -> dict[str, ad.Var]:
        """Fresh differentiable leaves holding copies of the current values."""
        return {name: ad.leaf(v) for name, v in self._values.items()}

    def constants(self) -> dict[str, ad.Var]:
        return {name: ad.Var(v) for name, v in self._values.items()}

    def flat(self) -> np.ndarray:
        if not self._values:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._values.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.count():
            raise ShapeError(f"flat vector of size {vec.size} for {self.count()} parameters")
        i = 0
        for v in self._values.values():
            v[...] = vec[i:i + v.size].reshape(v.shape)
            i += v.size

    def flat_grad(self) -> np.ndarray:
        if not self._grads:
            return np.zeros(0)
        return np.concatenate([g.ravel() for g in self._grads.values()])

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Values plus optimizer moments, for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self._values:
            out[name] = self._values[name]
        for name in self._values:
            out["adamw.m/" + name] = self._m[name]
        for name in self._values:
            out["adamw.v/" + name] = self._v[name]
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], step: int | None = None) -> None:
        for name in self._values:
            self[name] = arrays[name]
            if "adamw.m/" + name in arrays:
                self._m[name][...] = arrays["adamw.m/" + name]
                self._v[name][...] = arrays["adamw.v/" + name]
        if step is not None:
            self.step = int(step)


def mlp_param_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class Mlp:
    """Fully connected net, SiLU on hidden layers and a linear output.

    Weights live in a :class:`ParamStore` under ``<name>.W<i>`` / ``<name>.b<i>``
    with ``W`` shaped (fan_in, fan_out).
    """

    name: str
    sizes: tuple[int, ...]
    param_names: list[tuple[str, str]] = field(default_factory=list)

    @classmethod
    def create(cls, store: ParamStore, name: str, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        net = cls(name, tuple(int(s) for s in sizes))
        for i, (fan_in, fan_out) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
            w_name, b_name = f"{name}.W{i}", f"{name}.b{i}"
            store.add(w_name, rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            store.add(b_name, np.zeros(fan_out))
            net.param_names.append((w_name, b_name))
        return net

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def param_count(self) -> int:
        return mlp_param_count(self.sizes)

    def __call__(self, params: Mapping[str, ad.Var | np.ndarray], inputs):
        """Forward pass on a (batch, n_in) input; returns (batch, n_out)."""
        h = ad.as_var(inputs)
        last = len(self.param_names) - 1
        for i, (w_name, b_name) in enumerate(self.param_names):
            h = ad.matmul(h, ad.as_var(params[w_name])) + ad.as_var(params[b_name])
            if i < last:
                h = ad.silu(h)
        return h

    def forward(self, store: ParamStore, x: np.ndarray, t) -> np.ndarray:
        """Evaluate on state ``x`` (N,) or (B, N) and time ``t``; no graph recorded."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in - 1:
            raise ShapeError(f"{self.name}: state length {x.shape[-1]} != {self.n_in - 1}")
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        tb = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (xb.shape[0], 1))
        if not (np.all(np.isfinite(xb)) and np.all(np.isfinite(tb))):
            raise NumericError(f"{self.name}: non-finite input")
        with ad.no_grad():
            out = self(store.constants(), np.concatenate([xb, tb], axis=1)).value
        return out[0] if single else out


def grad_params(
    store: ParamStore,
    loss_fn: Callable[[Mapping[str, ad.Var]], ad.Var],
    accumulate: bool = True,
) -> float:
    """Evaluate ``loss_fn`` on fresh parameter leaves and store its gradients.

    Returns the loss value.  Parameters the loss does not touch receive zero.
    """
    leaves = store.leaves()
    loss = loss_fn(leaves)
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    names = list(leaves)
    grads = ad.grad(loss, [leaves[n] for n in names])
    if not accumulate:
        store.zero_grad()
    store.accumulate(dict(zip(names, grads)))
    return float(loss.value)


def grad_input(
    scalar_fn: Callable[[ad.Var, ad.Var], ad.Var],
    x,
    t,
    create_graph: bool = False,
):
    """Gradient of a scalar function with respect to state and time.

    ``scalar_fn(x, t)`` receives Vars.  Returns ``(d/dx, d/dt)`` shaped like
    the inputs; arrays, or Vars when ``create_graph`` is set.  If ``x``/``t``
    are already differentiable Vars they are used as is, which lets callers
    reuse a forward pass.
    """
    xv = x if isinstance(x, ad.Var) and x.requires_grad else ad.leaf(x)
    tv = t if isinstance(t, ad.Var) and t.requires_grad else ad.leaf(t)
    out = scalar_fn(xv, tv)
    if out.size != 1:
        out = out.sum()
    gx, gt = ad.grad(out, [xv, tv], create_graph=create_graph)
    return gx, gt


def clip_global_norm(store: ParamStore, max_norm: float = 1.0) -> float:
    """Scale all gradients jointly so their 2-norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in (store.grad(n) for n in store)))
    if total > max_norm:
        factor = max_norm / total
        for n in store:
            store.grad(n)[...] *= factor
        return factor
    return 1.0


def adamw_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    zero_grad: bool = True,
) -> None:
    """One AdamW update with bias correction and decoupled weight decay."""
    for name in store:
        g = store.grad(name)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name in store:
        p, g = store[name], store.grad(name)
        m, v = store.moments(name)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p -= lr * (update + weight_decay * p)
    if zero_grad:
        store.zero_grad()
