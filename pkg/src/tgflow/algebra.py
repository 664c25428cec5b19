"""so(N) generators, tensor contraction and the two gauge actions.

The contraction and Lie action are written against the small array protocol
shared by ``numpy.ndarray`` and :class:`tgflow.autodiff.Var` (``shape``,
``reshape``, ``sum``, ``*``, ``@``), so the same code evaluates a single point
and a recorded training batch.  Leading axes are treated as batch axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "SkewBasis",
    "CoeffTensor",
    "GradedVector",
    "LInftyBrackets",
    "so_basis",
    "algebra_dim",
    "lie_action",
    "tensor_contract",
    "linfty_action",
    "commutator_bracket",
]


def algebra_dim(n: int) -> int:
    return n * (n - 1) // 2


@dataclass(frozen=True)
class SkewBasis:
    """Canonical generators of so(N), ordered lexicographically by (i, j), i < j.

    The generator for (i, j) has +1 at (i, j) and -1 at (j, i).
    """

    dim_n: int
    generators: np.ndarray  # (count, N, N)
    pairs: tuple[tuple[int, int], ...]

    @property
    def count(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, a: int) -> np.ndarray:
        return self.generators[a]

    def index(self, i: int, j: int) -> int:
        return self.pairs.index((i, j))

    @property
    def flat(self) -> np.ndarray:
        """Generators as a (count, N*N) matrix; ``c @ flat`` is the matrix sum."""
        return self.generators.reshape(self.count, self.dim_n * self.dim_n)


def so_basis(n: int) -> SkewBasis:
    if n < 1:
        raise ShapeError(f"so(N) needs N >= 1, got {n}")
    pairs = tuple(itertools.combinations(range(n), 2))
    gens = np.zeros((len(pairs), n, n))
    for a, (i, j) in enumerate(pairs):
        gens[a, i, j] = 1.0
        gens[a, j, i] = -1.0
    gens.setflags(write=False)
    return SkewBasis(n, gens, pairs)


@dataclass(frozen=True)
class CoeffTensor:
    """Dense coefficients with ``rank`` spatial indices and one algebra index.

    ``values`` has shape (N,)*rank + (algebra_dim,), optionally preceded by
    batch axes.
    """

    rank: int
    dim_n: int
    algebra_dim: int
    values: np.ndarray

    def __post_init__(self) -> None:
        want = (self.dim_n,) * self.rank + (self.algebra_dim,)
        if tuple(self.values.shape[-len(want):]) != want:
            raise ShapeError(f"coefficient shape {self.values.shape} does not end in {want}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("coefficient tensor has non-finite entries")


def lie_action(coeffs, basis: SkewBasis, v):
    """Return ``(sum_a coeffs_a L_a) v``; batch axes of coeffs and v must agree."""
    n, count = basis.dim_n, basis.count
    if coeffs.shape[-1] != count:
        raise ShapeError(f"expected {count} coefficients, got shape {coeffs.shape}")
    if v.shape[-1] != n:
        raise ShapeError(f"expected vectors of length {n}, got shape {v.shape}")
    if count == 0:
        return v * 0.0
    batch = coeffs.shape[:-1]
    mat = (coeffs @ basis.flat).reshape(batch + (n, n))
    return (mat * v.reshape(v.shape[:-1] + (1, n))).sum(axis=-1)


def tensor_contract(t, dirs: Sequence):
    """Contract the spatial indices of ``t`` with one direction vector each.

    ``t`` has shape batch + (N,)*k + (A,), each direction batch + (N,).  The
    first spatial index pairs with ``dirs[0]``.  Returns batch + (A,).
    """
    k = len(dirs)
    if t.ndim < k + 1:
        raise ShapeError(f"tensor of rank {t.ndim - 1} cannot take {k} directions")
    batch_nd = t.ndim - k - 1
    spatial = t.shape[batch_nd:-1]
    if k and len(set(spatial)) != 1:
        raise ShapeError(f"spatial axes must share one size, got {spatial}")
    out = t
    for d in dirs:
        n = d.shape[-1]
        if d.ndim != batch_nd + 1 or n != out.shape[batch_nd]:
            raise ShapeError(f"direction shape {d.shape} does not fit tensor shape {out.shape}")
        trailing = out.ndim - batch_nd - 1
        out = (out * d.reshape(d.shape[:-1] + (n,) + (1,) * trailing)).sum(axis=batch_nd)
    return out


# -- graded / L-infinity interface ---------------------------------------------


@dataclass(frozen=True)
class GradedVector:
    """Element of a graded vector space: degree -> component array.

    Zero components are dropped, so ``degrees`` lists exactly the nonzero ones.
    """

    components: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        kept = {int(d): np.asarray(c, dtype=np.float64) for d, c in self.components.items()}
        kept = {d: c for d, c in kept.items() if np.any(c != 0.0)}
        object.__setattr__(self, "components", dict(sorted(kept.items())))

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(self.components)

    def __getitem__(self, degree: int) -> np.ndarray:
        return self.components[degree]

    def get(self, degree: int, size: int) -> np.ndarray:
        return self.components.get(degree, np.zeros(size))

    def __add__(self, other: "GradedVector") -> "GradedVector":
        out = dict(self.components)
        for d, c in other.components.items():
            if d in out:
                if out[d].shape != c.shape:
                    raise ShapeError(f"degree {d}: shapes {out[d].shape} and {c.shape} differ")
                out[d] = out[d] + c
            else:
                out[d] = c
        return GradedVector(out)

    def scale(self, c: float) -> "GradedVector":
        return GradedVector({d: c * v for d, v in self.components.items()})

    def allclose(self, other: "GradedVector", **kw) -> bool:
        if self.degrees != other.degrees:
            return False
        return all(np.allclose(self[d], other[d], **kw) for d in self.degrees)


Bracket = Callable[..., GradedVector]


@dataclass(frozen=True)
class LInftyBrackets:
    """Multilinear brackets ``b_m`` supplied as callbacks, keyed by arity m.

    ``shifts`` optionally declares the degree shift of each bracket: the
    output degree must equal the sum of input degrees plus the shift.
    """

    brackets: Mapping[int, Bracket]
    shifts: Mapping[int, int] = field(default_factory=dict)

    @property
    def max_arity(self) -> int:
        return max(self.brackets, default=0)

    def __call__(self, m: int, *args: GradedVector) -> GradedVector:
        if len(args) != m:
            raise ShapeError(f"bracket b_{m} takes {m} arguments, got {len(args)}")
        out = self.brackets[m](*args)
        if m in self.shifts and out.degrees:
            allowed = {sum(c) + self.shifts[m] for c in itertools.product(*(a.degrees for a in args))}
            bad = set(out.degrees) - allowed
            if bad:
                raise ShapeError(f"b_{m} produced degrees {sorted(bad)} outside the declared shift")
        return out


def linfty_action(
    gauge_coeffs,
    brackets: LInftyBrackets,
    basis_vectors: Sequence[GradedVector],
    t_hat: GradedVector,
) -> GradedVector:
    """``sum_m sum_a c_a b_m(e_a, T, ..., T)`` with m - 1 copies of T, m >= 2."""
    coeffs = np.asarray(gauge_coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.shape[0] != len(basis_vectors):
        raise ShapeError(
            f"{coeffs.shape} coefficients for {len(basis_vectors)} basis vectors"
        )
    if any(m < 2 for m in brackets.brackets):
        raise ShapeError("action brackets must have arity >= 2")
    # b_m is linear in its first slot, so contract the coefficients first.
    element = GradedVector()
    for c, e in zip(coeffs, basis_vectors):
        element = element + e.scale(float(c))
    total = GradedVector()
    for m in sorted(brackets.brackets):
        total = total + brackets(m, element, *([t_hat] * (m - 1)))
    return total


def commutator_bracket(basis: SkewBasis, degree: int = 0) -> LInftyBrackets:
    """The Lie case as an L-infinity algebra: only ``b_2``, acting by matrices.

    Basis vectors are ``e_a`` with the one-hot coefficient vector in ``degree``;
    ``b_2(e, v) = (sum_a e_a L_a) v``.
    """

    def b2(e: GradedVector, v: GradedVector) -> GradedVector:
        c = e.get(degree, basis.count)
        w = v.get(degree, basis.dim_n)
        return GradedVector({degree: lie_action(c, basis, w)})

    return LInftyBrackets({2: b2}, {2: -degree})
