import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgflow.config import DatasetConfig
from tgflow.dataset import MixtureSpec, mixture_means, read_binary, sample, write_binary, write_csv
from tgflow.errors import ConfigError, MissingInputError, ShapeError


def test_benchmark_configuration_defaults():
    spec = MixtureSpec(n=2)
    assert (spec.k, spec.alpha, spec.sigma2) == (10_000, 250.0, 0.5)
    assert (DatasetConfig().n_train, DatasetConfig().n_test) == (45_000, 15_000)
    np.testing.assert_allclose(spec.weights.sum(), 1.0, rtol=1e-12)
    assert np.all(spec.weights == 1e-4)


def test_means_k4_n2():
    means = mixture_means(MixtureSpec(n=2, k=4, alpha=250.0))
    np.testing.assert_array_equal(means, [[250, 0], [0, -250], [250, -25], [25, -250]])


def test_means_k2_n2_secondary_axis_fires():
    # K=2: a2 = (k + 1) mod 2 differs from a1, so the half-scale secondary
    # coordinate is placed; k < N excludes the overcomplete offset.
    means = mixture_means(MixtureSpec(n=2, k=2, alpha=250.0))
    np.testing.assert_array_equal(means, [[250, -125], [125, -250]])


def test_means_offset_accumulates_on_secondary_axis():
    # N=3, K=8, k=4: a1 = 1 (+alpha), a2 = 2 (-alpha/2 since 5 is odd),
    # b = (1 + 1) mod 3 = 2 collides with a2; 4 mod 3 != 0 gives -0.1*alpha
    means = mixture_means(MixtureSpec(n=3, k=8, alpha=250.0))
    np.testing.assert_array_equal(means[4], [0.0, 250.0, -150.0])
    # k=3: a1 = 0 (-alpha), a2 = (3 + 4) mod 3 = 1 (+alpha/2 since 4 is even),
    # b = 1 again with +0.1*alpha since 3 mod 3 == 0
    np.testing.assert_array_equal(means[3], [-250.0, 150.0, 0.0])


def test_means_level_grows_with_k():
    # N=1: only step 1 and step 3 apply, both on coordinate 0
    means = mixture_means(MixtureSpec(n=1, k=4, alpha=10.0))
    np.testing.assert_array_equal(means[:, 0], [10.0, -10.0 - 1.0 * 1, 10.0 - 1.0 * 2, -10.0 + 1.0 * 3])


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), k=st.integers(1, 40), alpha=st.floats(0.1, 500))
def test_means_are_deterministic(n, k, alpha):
    spec = MixtureSpec(n=n, k=k, alpha=alpha)
    a, b = mixture_means(spec), mixture_means(spec)
    assert a.shape == (k, n)
    assert np.array_equal(a, b)


def test_count_zero():
    x = sample(MixtureSpec(n=3, k=5), 0)
    assert x.shape == (0, 3)


def test_zero_variance_returns_means():
    spec = MixtureSpec(n=3, k=7, sigma2=0.0)
    x, comp = sample(spec, 500, seed=1, return_components=True)
    np.testing.assert_array_equal(x, mixture_means(spec)[comp])
    rows = {tuple(r) for r in mixture_means(spec)}
    assert all(tuple(r) in rows for r in x)


def test_single_component_variance():
    x = sample(MixtureSpec(n=3, k=1), 100_000, seed=4)
    var = x.var(axis=0)
    assert np.all(np.abs(var - 0.5) < 0.05 * 0.5)
    np.testing.assert_allclose(x.mean(axis=0), mixture_means(MixtureSpec(n=3, k=1))[0], atol=0.02)


def test_same_seed_is_bit_identical():
    spec = MixtureSpec(n=4, k=64, alpha=25.0)
    assert np.array_equal(sample(spec, 1000, seed=(3, 1)), sample(spec, 1000, seed=(3, 1)))
    assert not np.array_equal(sample(spec, 1000, seed=(3, 1)), sample(spec, 1000, seed=(3, 2)))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_component_frequencies_uniform(seed):
    k, count = 8, 80_000
    _, comp = sample(MixtureSpec(n=2, k=k), count, seed=seed, return_components=True)
    freq = np.bincount(comp, minlength=k)
    p = 1.0 / k
    sigma = np.sqrt(count * p * (1 - p))
    assert np.all(np.abs(freq - count * p) < 3 * sigma)


def test_invalid_specs():
    with pytest.raises(ConfigError):
        MixtureSpec(n=0)
    with pytest.raises(ConfigError):
        MixtureSpec(n=2, k=0)
    with pytest.raises(ConfigError):
        sample(MixtureSpec(n=2), -1)


def test_binary_round_trip(tmp_path):
    x = sample(MixtureSpec(n=3, k=5), 17, seed=0)
    path = tmp_path / "d.tgfd"
    write_binary(path, x)
    raw = path.read_bytes()
    assert raw[:4] == b"TGFD"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 17
    assert len(raw) == 16 + 17 * 3 * 8
    assert np.array_equal(read_binary(path), x)
    assert np.frombuffer(raw[16:24], "<f8")[0] == x[0, 0]


def test_binary_empty_and_errors(tmp_path):
    path = tmp_path / "e.tgfd"
    write_binary(path, np.zeros((0, 4)))
    assert read_binary(path).shape == (0, 4)
    assert len(path.read_bytes()) == 16
    with pytest.raises(MissingInputError):
        read_binary(tmp_path / "missing.tgfd")
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ShapeError):
        read_binary(path)
    write_binary(path, np.ones((2, 2)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ShapeError):
        read_binary(path)


def test_csv_export(tmp_path):
    x = np.array([[0.1, -2.0], [3.5, 1e-17]])
    write_csv(tmp_path / "d.csv", x)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x0,x1"
    back = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert np.array_equal(back, x)
