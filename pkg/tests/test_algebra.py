import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgflow.algebra import (
    CoeffTensor,
    GradedVector,
    LInftyBrackets,
    commutator_bracket,
    lie_action,
    linfty_action,
    so_basis,
    tensor_contract,
)
from tgflow.errors import ShapeError


def loop_contract(t, dirs):
    """Nested-loop reference for tensor_contract on unbatched inputs."""
    k = len(dirs)
    n = t.shape[0] if k else 0
    out = np.zeros(t.shape[-1])
    for idx in itertools.product(range(n), repeat=k):
        w = 1.0
        for d, i in zip(dirs, idx):
            w *= d[i]
        out += t[idx] * w
    return out


# -- so_basis ------------------------------------------------------------------


def test_so1_is_empty():
    b = so_basis(1)
    assert b.count == 0
    assert b.generators.shape == (0, 1, 1)


def test_so2_single_generator():
    b = so_basis(2)
    assert b.count == 1
    np.testing.assert_array_equal(b[0], [[0.0, 1.0], [-1.0, 0.0]])


def test_so3_commutator_sign_convention():
    b = so_basis(3)
    l01, l02, l12 = (b[b.index(*p)] for p in [(0, 1), (0, 2), (1, 2)])
    comm = l01 @ l12 - l12 @ l01
    # E_ij E_jk = E_ik by hand: L01 L12 = E02 and L12 L01 = E20
    e = np.eye(3)
    l01_l12 = np.outer(e[0], e[2])
    l12_l01 = np.outer(e[2], e[0])
    np.testing.assert_array_equal(l01 @ l12, l01_l12)
    np.testing.assert_array_equal(l12 @ l01, l12_l01)
    np.testing.assert_array_equal(comm, l02)


@pytest.mark.parametrize("n", range(1, 9))
def test_basis_invariants(n):
    b = so_basis(n)
    assert b.count == n * (n - 1) // 2
    for g in b.generators:
        assert np.array_equal(g + g.T, np.zeros((n, n)))
    gram = np.einsum("aij,bij->ab", b.generators, b.generators)
    np.testing.assert_array_equal(gram, 2.0 * np.eye(b.count))
    assert list(b.pairs) == sorted(b.pairs)


def test_so_basis_rejects_zero():
    with pytest.raises(ShapeError):
        so_basis(0)


# -- lie_action ----------------------------------------------------------------


def test_lie_action_zero_coeffs():
    b = so_basis(4)
    v = np.arange(4.0)
    np.testing.assert_array_equal(lie_action(np.zeros(b.count), b, v), np.zeros(4))


def test_lie_action_so2_example():
    np.testing.assert_array_equal(lie_action(np.array([1.0]), so_basis(2), np.array([1.0, 0.0])), [0.0, -1.0])


def test_lie_action_shape_errors():
    b = so_basis(3)
    with pytest.raises(ShapeError):
        lie_action(np.zeros(2), b, np.zeros(3))
    with pytest.raises(ShapeError):
        lie_action(np.zeros(3), b, np.zeros(4))


def test_lie_action_batched_matches_single():
    rng = np.random.default_rng(3)
    b = so_basis(4)
    c = rng.standard_normal((5, b.count))
    v = rng.standard_normal((5, 4))
    batched = lie_action(c, b, v)
    for i in range(5):
        np.testing.assert_allclose(batched[i], lie_action(c[i], b, v[i]), rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
def test_lie_action_is_bilinear(n, seed):
    rng = np.random.default_rng(seed)
    b = so_basis(n)
    c1, c2 = rng.standard_normal((2, b.count))
    v1, v2 = rng.standard_normal((2, n))
    a, s = rng.standard_normal(2)

    def rel(x, y):
        return np.linalg.norm(x - y) / max(np.linalg.norm(y), 1e-300)

    assert rel(lie_action(a * c1 + s * c2, b, v1), a * lie_action(c1, b, v1) + s * lie_action(c2, b, v1)) < 1e-12
    assert rel(lie_action(c1, b, a * v1 + s * v2), a * lie_action(c1, b, v1) + s * lie_action(c1, b, v2)) < 1e-12
    np.testing.assert_allclose(lie_action(2 * c1, b, v1), 2 * lie_action(c1, b, v1), rtol=1e-15)


def test_lie_action_preserves_norm_orthogonality():
    # Skew matrices give M v orthogonal to v.
    rng = np.random.default_rng(0)
    b = so_basis(5)
    v = rng.standard_normal(5)
    w = lie_action(rng.standard_normal(b.count), b, v)
    assert abs(w @ v) < 1e-12


# -- tensor_contract -----------------------------------------------------------


def test_contract_zero_tensor():
    out = tensor_contract(np.zeros((3, 3, 2)), [np.ones(3), np.ones(3)])
    np.testing.assert_array_equal(out, np.zeros(2))


def test_contract_all_ones_rank2():
    t = np.ones((2, 2, 3))
    out = tensor_contract(t, [np.ones(2), np.ones(2)])
    np.testing.assert_array_equal(out, [4.0, 4.0, 4.0])
    np.testing.assert_array_equal(loop_contract(t, [np.ones(2), np.ones(2)]), [4.0, 4.0, 4.0])


def test_contract_identity_rank1():
    d = np.array([0.3, -1.5, 2.0])
    np.testing.assert_array_equal(tensor_contract(np.eye(3), [d]), d)


def test_contract_order_of_indices():
    # first spatial index pairs with the first direction
    t = np.zeros((2, 2, 1))
    t[0, 1, 0] = 1.0
    out = tensor_contract(t, [np.array([2.0, 0.0]), np.array([0.0, 5.0])])
    assert out[0] == 10.0
    out = tensor_contract(t, [np.array([0.0, 5.0]), np.array([2.0, 0.0])])
    assert out[0] == 0.0


def test_contract_shape_errors():
    with pytest.raises(ShapeError):
        tensor_contract(np.zeros((2, 2, 1)), [np.zeros(3), np.zeros(3)])
    with pytest.raises(ShapeError):
        tensor_contract(np.zeros((2, 1)), [np.zeros(2), np.zeros(2)])


@settings(max_examples=80, deadline=None)
@given(n=st.integers(1, 4), k=st.integers(1, 3), a=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_contract_matches_loop_oracle(n, k, a, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((n,) * k + (a,))
    dirs = list(rng.standard_normal((k, n)))
    got, want = tensor_contract(t, dirs), loop_contract(t, dirs)
    assert np.linalg.norm(got - want) <= 1e-12 * max(np.linalg.norm(want), 1e-300)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 4), k=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_contract_multilinear(n, k, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((n,) * k + (3,))
    dirs = list(rng.standard_normal((k, n)))
    slot = int(rng.integers(k))
    other = rng.standard_normal(n)
    a, b = rng.standard_normal(2)
    mixed = list(dirs)
    mixed[slot] = a * dirs[slot] + b * other
    swapped = list(dirs)
    swapped[slot] = other
    want = a * tensor_contract(t, dirs) + b * tensor_contract(t, swapped)
    got = tensor_contract(t, mixed)
    assert np.linalg.norm(got - want) <= 1e-10 * max(np.linalg.norm(want), 1e-12)


def test_coeff_tensor_validates_shape():
    CoeffTensor(2, 3, 3, np.zeros((3, 3, 3)))
    with pytest.raises(ShapeError):
        CoeffTensor(2, 3, 3, np.zeros((3, 3, 2)))
    with pytest.raises(ShapeError):
        CoeffTensor(1, 2, 1, np.array([[np.nan], [0.0]]))


# -- graded vectors and the L-infinity action ----------------------------------


def test_graded_vector_drops_zero_components():
    g = GradedVector({0: np.zeros(2), 1: np.array([1.0, 0.0])})
    assert g.degrees == (1,)


def _one_hot_basis(count, degree=0):
    return [GradedVector({degree: np.eye(count)[a]}) for a in range(count)]


def test_linfty_zero_brackets():
    zero = LInftyBrackets({2: lambda e, v: GradedVector(), 3: lambda e, v, w: GradedVector()})
    out = linfty_action(np.ones(2), zero, _one_hot_basis(2), GradedVector({0: np.ones(2)}))
    assert out.degrees == ()


@pytest.mark.parametrize("n", [2, 3, 5])
def test_linfty_commutator_reduces_to_lie_action(n):
    rng = np.random.default_rng(n)
    b = so_basis(n)
    c = rng.standard_normal(b.count)
    v = rng.standard_normal(n)
    out = linfty_action(c, commutator_bracket(b), _one_hot_basis(b.count), GradedVector({0: v}))
    assert np.array_equal(out[0], lie_action(c, b, v))


def test_linfty_rejects_mismatch():
    b = so_basis(3)
    with pytest.raises(ShapeError):
        linfty_action(np.ones(2), commutator_bracket(b), _one_hot_basis(3), GradedVector({0: np.ones(3)}))


def _toy_algebra():
    """Two-dimensional space: degree 0 spanned by x, degree 1 spanned by y.

    b_2(u, v) puts u0*v1 - u1*v0 into degree 1 (a shift of +1 relative to
    the degree-0 x degree-0 product); b_3(u, v, w) = u0 * v0 * w0 in degree 0.
    Both are multilinear in their arguments.
    """

    def comp(g, d):
        return float(g.get(d, 1)[0])

    def b2(u, v):
        return GradedVector({1: np.array([comp(u, 0) * comp(v, 1) - comp(u, 1) * comp(v, 0)])})

    def b3(u, v, w):
        return GradedVector({0: np.array([comp(u, 0) * comp(v, 0) * comp(w, 0)])})

    return LInftyBrackets({2: b2, 3: b3})


def test_linfty_arity3_matches_direct_summation():
    brackets = _toy_algebra()
    e = [GradedVector({0: np.array([1.0])}), GradedVector({1: np.array([1.0])})]
    t_hat = GradedVector({0: np.array([2.0]), 1: np.array([-3.0])})
    c = np.array([0.5, -4.0])
    # direct enumeration of every term c_a * b_m(e_a, T, ..., T)
    want = GradedVector()
    for a in range(2):
        for m in (2, 3):
            want = want + brackets(m, e[a], *([t_hat] * (m - 1))).scale(c[a])
    got = linfty_action(c, brackets, e, t_hat)
    assert got.allclose(want, rtol=0, atol=1e-15)
    # by hand: b2 terms 0.5*(1*-3 - 0) + (-4)*(0 - 1*2) = -1.5 + 8 = 6.5 in degree 1;
    # b3 terms 0.5*(1*2*2) + (-4)*0 = 2 in degree 0
    np.testing.assert_allclose(got[1], [6.5])
    np.testing.assert_allclose(got[0], [2.0])


def test_linfty_degree_shift_is_checked():
    bad = LInftyBrackets({2: lambda e, v: GradedVector({5: np.ones(1)})}, shifts={2: 0})
    e = [GradedVector({0: np.ones(1)})]
    with pytest.raises(ShapeError):
        linfty_action(np.ones(1), bad, e, GradedVector({0: np.ones(1)}))


def test_linfty_brackets_are_multilinear():
    brackets = _toy_algebra()
    rng = np.random.default_rng(1)

    def rand():
        return GradedVector({0: rng.standard_normal(1), 1: rng.standard_normal(1)})

    for m in (2, 3):
        args = [rand() for _ in range(m)]
        other = rand()
        a, s = rng.standard_normal(2)
        for slot in range(m):
            mixed = list(args)
            mixed[slot] = args[slot].scale(a) + other.scale(s)
            swapped = list(args)
            swapped[slot] = other
            lhs = brackets(m, *mixed)
            rhs = brackets(m, *args).scale(a) + brackets(m, *swapped).scale(s)
            for d in set(lhs.degrees) | set(rhs.degrees):
                np.testing.assert_allclose(lhs.get(d, 1), rhs.get(d, 1), atol=1e-12)
