"""Random Fourier ("kitchen sink") features for the Gaussian RBF kernel.

``z(x) = sqrt(2/D) cos(W x + b)`` with rows of ``W`` drawn from
``N(0, sigma^-2 I)`` and ``b`` uniform on ``[0, 2 pi)`` satisfies
``E[z(u) . z(v)] = exp(-||u - v||^2 / (2 sigma^2))``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from doublebasis.errors import DataError

MIN_FEATURES = 16


@dataclass(frozen=True)
class FeatureMap:
    """A frozen random feature draw, fully determined by ``(S, D, sigma, seed)``."""

    input_dim: int
    n_features: int
    bandwidth: float
    seed: int
    frequencies: NDArray = field(init=False, repr=False, compare=False)
    phases: NDArray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.input_dim < 1 or self.n_features < 1:
            raise ValueError("input_dim and n_features must be >= 1")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        rng = np.random.default_rng(int(self.seed))
        omega = rng.standard_normal((self.n_features, self.input_dim)) / float(self.bandwidth)
        b = rng.uniform(0.0, 2.0 * np.pi, self.n_features)
        omega.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "frequencies", omega)
        object.__setattr__(self, "phases", b)
        object.__setattr__(self, "_scale", math.sqrt(2.0 / self.n_features))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.frequencies, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.phases, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "n_features": self.n_features,
                "bandwidth": self.bandwidth, "seed": self.seed, "checksum": self.checksum()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        fmap = cls(int(d["input_dim"]), int(d["n_features"]), float(d["bandwidth"]), int(d["seed"]))
        expected = d.get("checksum")
        if expected is not None and fmap.checksum() != expected:
            raise DataError("regenerated feature map does not match the stored checksum")
        return fmap

    def transform(self, x: ArrayLike) -> NDArray:
        """Features of one vector ``(S,)`` or a batch ``(N, S)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected input length {self.input_dim}, got {x.shape[-1]}")
        return self._scale * np.cos(x @ self.frequencies.T + self.phases)


def cosine_features(x: ArrayLike, frequencies: ArrayLike, phases: ArrayLike) -> NDArray:
    """``sqrt(2/D) cos(omega x + b)`` for explicit ``(D, S)`` frequencies and ``(D,)`` phases."""
    omega = np.atleast_2d(np.asarray(frequencies, dtype=float))
    b = np.atleast_1d(np.asarray(phases, dtype=float))
    x = np.asarray(x, dtype=float)
    if omega.shape[0] != b.shape[0]:
        raise ValueError(f"{omega.shape[0]} frequency rows but {b.shape[0]} phases")
    if x.shape[-1] != omega.shape[1]:
        raise ValueError(f"expected input length {omega.shape[1]}, got {x.shape[-1]}")
    return math.sqrt(2.0 / b.shape[0]) * np.cos(x @ omega.T + b)


def draw_feature_map(input_dim: int, n_features: int, bandwidth: float, seed: int) -> FeatureMap:
    return FeatureMap(int(input_dim), int(n_features), float(bandwidth), int(seed))


def apply_features(fmap: FeatureMap, x: ArrayLike) -> NDArray:
    return fmap.transform(x)


def exact_rbf_kernel(u: ArrayLike, v: ArrayLike, sigma: float = 1.0) -> NDArray | float:
    """``exp(-||u - v||^2 / (2 sigma^2))``, broadcasting over leading axes."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1:] != v.shape[-1:]:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d2 = np.sum((u - v) ** 2, axis=-1)
    out = np.exp(-d2 / (2.0 * sigma * sigma))
    return float(out) if np.ndim(out) == 0 else out


def choose_feature_count(n: int, c: float = 1.0) -> int:
    """Default feature count ``ceil(c n ln n)``, never below 16."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return max(MIN_FEATURES, int(math.ceil(c * n * math.log(n))))
