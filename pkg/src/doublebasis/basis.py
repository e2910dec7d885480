"""Tensor-product cosine basis on the unit box and projection density estimates.

A density on ``[0, 1]^l`` is summarised by its coefficients against the
orthonormal family ``phi_alpha(x) = prod_i phi_{alpha_i}(x_i)`` with
``phi_0 = 1`` and ``phi_j(u) = sqrt(2) cos(pi j u)``.  Only indices inside a
Sobolev-ellipsoid truncation ``kappa_alpha <= t`` are kept, so every sample
set maps to a fixed-length coefficient vector whose Euclidean geometry is the
L2 geometry of the truncated density estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid

from doublebasis.errors import DataError, DomainError, ResourceError

SQRT2 = np.sqrt(2.0)
DEFAULT_ENUMERATION_CAP = 10**7
# relative slack so that kappa == t ties survive floating-point rounding
_TIE_RTOL = 1e-12


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BasisConfig:
    """Dimension and Sobolev-ellipsoid parameters of the basis.

    Parameters
    ----------
    dim : int
        Dimension ``l`` of the input domain.
    smoothness : sequence of float
        Per-coordinate smoothness ``gamma_i``.
    scale : sequence of float
        Per-coordinate scale ``nu_i``.
    radius : float
        Ellipsoid radius ``A``.
    """

    dim: int
    smoothness: tuple[float, ...]
    scale: tuple[float, ...]
    radius: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        gamma = tuple(float(g) for g in np.broadcast_to(self.smoothness, (self.dim,)))
        nu = tuple(float(v) for v in np.broadcast_to(self.scale, (self.dim,)))
        if any(not g > 0 for g in gamma):
            raise ValueError(f"smoothness must be positive, got {gamma}")
        if any(not v > 0 for v in nu):
            raise ValueError(f"scale must be positive, got {nu}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "smoothness", gamma)
        object.__setattr__(self, "scale", nu)
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def isotropic(cls, dim: int, smoothness: float = 1.0, scale: float = 1.0,
                  radius: float = 1.0) -> "BasisConfig":
        return cls(dim, (smoothness,) * dim, (scale,) * dim, radius)

    @property
    def inverse_smoothness(self) -> float:
        """``sum_i 1 / gamma_i``; governs how fast the index set grows with t."""
        return float(sum(1.0 / g for g in self.smoothness))

    def kappa_squared(self, alpha: ArrayLike) -> NDArray:
        alpha = np.abs(np.asarray(alpha, dtype=float))
        nu = np.asarray(self.scale)
        gamma = np.asarray(self.smoothness)
        return np.sum((nu * alpha) ** (2.0 * gamma), axis=-1)

    def coordinate_bounds(self, t: float) -> NDArray:
        """Real-valued per-coordinate bounds ``|alpha_i| <= c_i`` for members of M_t."""
        nu = np.asarray(self.scale)
        gamma = np.asarray(self.smoothness)
        lam = int(np.argmin(nu ** (2.0 * gamma)))
        return nu[lam] ** (-gamma[lam] / gamma) * float(t) ** (1.0 / gamma)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "smoothness": list(self.smoothness),
                "scale": list(self.scale), "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisConfig":
        return cls(d["dim"], tuple(d["smoothness"]), tuple(d["scale"]), d.get("radius", 1.0))


@dataclass(frozen=True)
class MultiIndexSet:
    """Truncated index set ``M_t`` in lexicographic order.

    ``indices`` has shape ``(S, l)``; row order fixes the layout of every
    coefficient vector computed against this set.
    """

    indices: NDArray
    truncation: float
    config: BasisConfig
    _max_index: NDArray = field(init=False, repr=False, compare=False)
    _contiguous: bool = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != self.config.dim:
            raise ValueError(f"indices must have shape (S, {self.config.dim}), got {idx.shape}")
        object.__setattr__(self, "indices", _frozen(idx))
        object.__setattr__(self, "_max_index", _frozen(idx.max(axis=0) if len(idx) else
                                                       np.zeros(self.config.dim, np.int64)))
        object.__setattr__(self, "_contiguous",
                           bool(np.array_equal(idx[:, 0], np.arange(len(idx)))))

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiIndexSet):
            return NotImplemented
        return (self.config == other.config and self.truncation == other.truncation
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):
        return hash((self.config, self.truncation, self.indices.tobytes()))

    @property
    def size(self) -> int:
        return len(self)

    @property
    def zero_position(self) -> int:
        """Row of the all-zeros index (always 0 under lexicographic order)."""
        return 0

    def as_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(a) for a in row) for row in self.indices]

    def position(self, alpha: Sequence[int]) -> int:
        hits = np.flatnonzero((self.indices == np.asarray(alpha)).all(axis=1))
        if hits.size == 0:
            raise KeyError(tuple(alpha))
        return int(hits[0])


@dataclass(frozen=True)
class DomainTransform:
    """Per-coordinate affine map from a raw box ``[lower, upper]`` onto ``[0, 1]``.

    With ``clip=True`` raw points outside the box are pushed to its boundary
    instead of being rejected downstream.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    clip: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("lower and upper must have the same length")
        if any(not h > l for l, h in zip(lo, hi)):
            raise ValueError(f"upper must exceed lower in every coordinate: {lo} vs {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "clip", bool(self.clip))

    @classmethod
    def unit(cls, dim: int) -> "DomainTransform":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def is_identity(self) -> bool:
        return all(v == 0.0 for v in self.lower) and all(v == 1.0 for v in self.upper)

    def to_unit(self, x: ArrayLike) -> NDArray:
        x = np.asarray(x, dtype=float)
        if self.is_identity and not self.clip:
            return x
        lo = np.asarray(self.lower)
        u = (x - lo) / (np.asarray(self.upper) - lo)
        if self.clip:
            u = np.clip(u, 0.0, 1.0)
        return u

    def from_unit(self, u: ArrayLike) -> NDArray:
        lo = np.asarray(self.lower)
        return lo + np.asarray(u, dtype=float) * (np.asarray(self.upper) - lo)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "clip": self.clip}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainTransform":
        return cls(tuple(d["lower"]), tuple(d["upper"]), d.get("clip", False))


@dataclass(frozen=True)
class SampleSet:
    """One input instance: ``n`` points of dimension ``l`` plus provenance."""

    points: NDArray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError(f"points must be 2-D (n, l), got shape {pts.shape}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class CoefficientVector:
    """Projection coefficients aligned with a :class:`MultiIndexSet`."""

    values: NDArray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=float)))

    def __len__(self) -> int:
        return self.values.shape[0]


SamplesLike = Union[SampleSet, ArrayLike]


def as_points(samples: SamplesLike) -> NDArray:
    """Return the ``(n, l)`` point array of a sample set or raw array."""
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def _check_unit(x: NDArray) -> None:
    # min/max propagate NaN, so a single pair of reductions covers the fast path
    if x.min() >= 0.0 and x.max() <= 1.0:
        return
    bad = (x < 0.0) | (x > 1.0) | ~np.isfinite(x)
    if bad.any():
        pos = np.argwhere(bad)[0]
        coord = int(pos[-1])
        raise DomainError(f"coordinate {coord} = {x[tuple(pos)]!r} lies outside [0, 1]")


def cosine_table(u: NDArray, max_index: int) -> NDArray:
    """``phi_j(u)`` for ``j = 0..max_index``, appended as a trailing axis."""
    j = np.arange(max_index + 1, dtype=float)
    table = SQRT2 * np.cos(np.pi * u[..., None] * j)
    table[..., 0] = 1.0
    return table


def basis_eval(config: BasisConfig, alpha: Sequence[int], x: ArrayLike) -> float:
    """Evaluate ``phi_alpha`` at a single point ``x`` in ``[0, 1]^l``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    alpha = np.asarray(alpha, dtype=np.int64)
    if x.shape != (config.dim,) or alpha.shape != (config.dim,):
        raise ValueError(f"expected {config.dim} coordinates, got x{x.shape}, alpha{alpha.shape}")
    if (alpha < 0).any():
        raise ValueError(f"basis indices must be non-negative, got {tuple(alpha)}")
    _check_unit(x)
    vals = np.where(alpha == 0, 1.0, SQRT2 * np.cos(np.pi * alpha * x))
    return float(np.prod(vals))


def enumerate_index_set(config: BasisConfig, t: float,
                        cap: int = DEFAULT_ENUMERATION_CAP) -> MultiIndexSet:
    """All non-negative ``alpha`` with ``kappa_alpha <= t``, lexicographically ordered.

    The scan covers the box ``0 <= alpha_i <= c_i`` from
    :meth:`BasisConfig.coordinate_bounds`, which contains every member.
    """
    t = float(t)
    if not t >= 0:
        raise ValueError(f"truncation t must be non-negative, got {t}")
    bounds = np.floor(config.coordinate_bounds(t) * (1 + _TIE_RTOL)).astype(np.int64)
    box = float(np.prod(bounds.astype(float) + 1.0))
    if box > cap:
        raise ResourceError(f"index bounding box has {box:.3g} candidates, above the cap {cap}")
    grid = np.indices(tuple(bounds + 1)).reshape(config.dim, -1).T
    keep = config.kappa_squared(grid) <= t * t * (1 + _TIE_RTOL)
    return MultiIndexSet(grid[keep], t, config)


def choose_truncation(n: int, config: BasisConfig, C: float = 1.0) -> float:
    """Rate-optimal truncation ``t = C n^{1/(2 + 1/gamma)}``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return float(C) * float(n) ** (1.0 / (2.0 + config.inverse_smoothness))


def _design(points: NDArray, idx: MultiIndexSet) -> NDArray:
    """``phi_alpha(x)`` for every point (leading axes) and every alpha (last axis)."""
    if idx.config.dim == 1 and idx._contiguous:
        return cosine_table(points[..., 0], int(idx._max_index[0]))
    out = None
    for i in range(idx.config.dim):
        col = idx.indices[:, i]
        table = cosine_table(points[..., i], int(idx._max_index[i]))
        factor = table[..., col]
        out = factor if out is None else out * factor
    return out


def _mean_design(points: NDArray, idx: MultiIndexSet) -> NDArray:
    """Column means of :func:`_design` for one ``(n, l)`` sample set."""
    n = points.shape[0]
    if idx.config.dim == 1 and idx._contiguous:
        # cos(j pi u) = T_j(cos(pi u)): one cosine per point, then the Chebyshev
        # recurrence; the scale and phi_0 are applied after the sum
        S = len(idx)
        T = np.empty((S, n))
        T[0] = 1.0
        if S > 1:
            np.cos(np.pi * points[:, 0], out=T[1])
            c2 = 2.0 * T[1]
            for j in range(2, S):
                np.multiply(c2, T[j - 1], out=T[j])
                T[j] -= T[j - 2]
        a = T.sum(axis=1)
        a *= SQRT2 / n
        a[0] = 1.0
        return a
    return np.ones(n) @ _design(points, idx) / n


def estimate_coefficients(samples: SamplesLike, idx: MultiIndexSet,
                          check: bool = True) -> CoefficientVector:
    """Empirical coefficients ``a_alpha = mean_j phi_alpha(X_j)`` over ``idx``."""
    pts = as_points(samples)
    if pts.shape[0] == 0:
        raise ValueError("cannot estimate coefficients from an empty sample set")
    if pts.shape[1] != idx.config.dim:
        raise DataError(f"sample dimension {pts.shape[1]} does not match expected l={idx.config.dim}")
    if check:
        _check_unit(pts)
    return CoefficientVector(_mean_design(pts, idx), pts.shape[0])


def coefficient_matrix(sample_sets: Sequence[SamplesLike], idx: MultiIndexSet,
                       check: bool = True, chunk_elements: int = 2**24) -> NDArray:
    """Stack the coefficient vectors of many sample sets into an ``(N, S)`` array.

    Sets of equal size are processed in vectorised chunks; ragged inputs fall
    back to one set at a time.
    """
    arrays = [as_points(s) for s in sample_sets]
    N, S = len(arrays), len(idx)
    out = np.empty((N, S))
    if N == 0:
        return out
    sizes = {a.shape for a in arrays}
    if len(sizes) == 1:
        n, l = arrays[0].shape
        if n == 0:
            raise ValueError("cannot estimate coefficients from an empty sample set")
        if l != idx.config.dim:
            raise DataError(f"sample dimension {l} does not match expected l={idx.config.dim}")
        step = max(1, chunk_elements // max(1, n * S))
        for start in range(0, N, step):
            block = np.stack(arrays[start:start + step])
            if check:
                _check_unit(block)
            out[start:start + step] = _design(block, idx).mean(axis=1)
    else:
        for k, a in enumerate(arrays):
            out[k] = estimate_coefficients(a, idx, check=check).values
    return out


def _values(c) -> NDArray:
    return c.values if isinstance(c, CoefficientVector) else np.asarray(c, dtype=float)


def eval_density(coeffs, idx: MultiIndexSet, x: ArrayLike) -> NDArray | float:
    """Truncated series density at ``x`` (a point, or an ``(m, l)`` array of points).

    The estimate is an L2 object and may be negative.
    """
    c = _values(coeffs)
    if c.shape[0] != len(idx):
        raise ValueError(f"coefficient length {c.shape[0]} does not match index set size {len(idx)}")
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    if idx.config.dim == 1 and pts.shape[-1] != 1:
        pts = pts.reshape(-1, 1)
    _check_unit(pts)
    vals = _design(pts, idx) @ c
    return float(vals[0]) if single else vals


def l2_distance(c1, c2, idx: MultiIndexSet | None = None) -> float:
    """L2 distance between two truncated estimates, computed on coefficients."""
    a, b = _values(c1), _values(c2)
    if a.shape != b.shape or (idx is not None and a.shape[0] != len(idx)):
        raise ValueError(f"misaligned coefficient vectors: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def quadrature_l2(idx: MultiIndexSet, c1, c2, resolution: int = 2001) -> float:
    """Trapezoid-rule value of ``int (p1 - p2)^2`` over the unit box (l <= 2).

    Test oracle for :func:`l2_distance`; works on the evaluated densities,
    never on coefficient arithmetic.
    """
    l = idx.config.dim
    if l > 2:
        raise NotImplementedError("quadrature oracle supports l <= 2 only")
    if resolution < 1000:
        raise ValueError("resolution must be at least 1000 nodes per axis")
    diff = _values(c1) - _values(c2)
    u = np.linspace(0.0, 1.0, resolution)
    if l == 1:
        f = _design(u[:, None], idx) @ diff
        return float(trapezoid(f * f, u))
    # tensor grid evaluated row by row to bound memory
    rows = np.empty(resolution)
    tables = [cosine_table(u, int(idx._max_index[i])) for i in range(2)]
    second = tables[1][:, idx.indices[:, 1]] * diff        # (res, S)
    for r in range(resolution):
        f = second @ tables[0][r, idx.indices[:, 0]]
        rows[r] = trapezoid(f * f, u)
    return float(trapezoid(rows, u))
