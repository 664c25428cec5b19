"""Synthetic Gaussian mixture benchmark.

Component means follow a fixed deterministic layout (primary axis, secondary
axis, and an extra offset once there are more components than dimensions);
every component has covariance 0.5 I and weight 1/K.

Sampling uses the counter-based Philox generator with two streams per seed:
stream 0 draws component indices, stream 1 draws the Gaussian noise.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, MissingInputError, ShapeError

__all__ = [
    "MixtureSpec",
    "mixture_means",
    "sample",
    "stream",
    "write_binary",
    "read_binary",
    "write_csv",
    "DATA_MAGIC",
]

DATA_MAGIC = b"TGFD"
DATA_VERSION = 1
_HEADER = struct.Struct("<4sIII")

COMPONENT_STREAM = 0
NOISE_STREAM = 1


@dataclass(frozen=True)
class MixtureSpec:
    n: int
    k: int = 10_000
    alpha: float = 250.0
    sigma2: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.n}")
        if self.k < 1:
            raise ConfigError(f"component count must be >= 1, got {self.k}")
        if self.sigma2 < 0:
            raise ConfigError(f"variance must be >= 0, got {self.sigma2}")

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.k, 1.0 / self.k)


def mixture_means(spec: MixtureSpec) -> np.ndarray:
    n, k_total, alpha = spec.n, spec.k, float(spec.alpha)
    means = np.zeros((k_total, n))
    for k in range(k_total):
        a1 = k % n
        means[k, a1] = alpha if k % 2 == 0 else -alpha
        a2 = (k + k_total // 2) % n
        if a2 != a1:
            means[k, a2] = 0.5 * alpha if (k + 1) % 2 == 0 else -0.5 * alpha
        if k_total > n and k >= n:
            level = k // n
            b = (a1 + level) % n
            sign = 1.0 if k % 3 == 0 else -1.0
            means[k, b] += sign * 0.1 * alpha * level
    return means


def stream(seed: int | Sequence[int], index: int) -> np.random.Generator:
    """Independent Philox stream ``index`` derived from ``seed``."""
    entropy = [int(s) for s in np.atleast_1d(seed)] + [int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sample(
    spec: MixtureSpec,
    count: int,
    seed: int | Sequence[int] | None = None,
    return_components: bool = False,
):
    """Draw ``count`` points; reproducible given ``seed`` (defaults to spec.seed)."""
    if count < 0:
        raise ConfigError(f"sample count must be >= 0, got {count}")
    seed = spec.seed if seed is None else seed
    comp = stream(seed, COMPONENT_STREAM).integers(0, spec.k, size=count)
    noise = stream(seed, NOISE_STREAM).standard_normal((count, spec.n))
    x = mixture_means(spec)[comp] + np.sqrt(spec.sigma2) * noise
    if return_components:
        return x, comp
    return x


# -- file formats -------------------------------------------------------------


def write_binary(path: str | Path, x: np.ndarray) -> None:
    """16-byte header (magic, version, N, count) then little-endian float64 rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (count, N) matrix, got shape {x.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(DATA_MAGIC, DATA_VERSION, x.shape[1], x.shape[0]))
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())
    tmp.replace(path)


def read_binary(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"dataset file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise ShapeError(f"{path}: truncated header")
    magic, version, n, count = _HEADER.unpack_from(blob)
    if magic != DATA_MAGIC:
        raise ShapeError(f"{path}: bad magic {magic!r}")
    if version != DATA_VERSION:
        raise ShapeError(f"{path}: unsupported version {version}")
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * n * count:
        raise ShapeError(f"{path}: payload of {len(payload)} bytes, expected {8 * n * count}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(count, n)


def write_csv(path: str | Path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(x.shape[1])])
        for row in x:
            writer.writerow([repr(float(v)) for v in row])
