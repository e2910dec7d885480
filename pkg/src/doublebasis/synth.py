"""Seeded generators for the three experiment families.

* ``synthetic-map``: inputs are mixtures of two truncated Gaussians on
  ``[0, 1]``; the response is ``f(P) = sum_i theta_i exp(-||g_i - p||^2 / 2)``
  for a random ground-truth map with ten mixture components ``g_i``.
* ``gmm-modelsel``: inputs are samples of a random 2-D Gaussian mixture, the
  response is its number of components.
* ``dirichlet``: inputs are Dirichlet samples, the response is the parameter
  vector.

Every generator is a pure function of its seed.  Datasets derive one child
seed per instance from a :class:`numpy.random.SeedSequence`, so a dataset is
reproducible regardless of how it is later partitioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import integrate
from scipy.special import ndtr

from doublebasis.basis import DomainTransform
from doublebasis.errors import NumericError

KINDS = ("synthetic-map", "gmm-modelsel", "dirichlet")
GMM_BOX = 15.0
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# truncated Gaussian mixtures on [0, 1]


@dataclass(frozen=True)
class TruncGaussMixture:
    """Equal-weight mixture of Gaussians, each truncated to ``[0, 1]`` and renormalised."""

    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "stds", tuple(float(s) for s in self.stds))
        if len(self.means) != len(self.stds) or not self.means:
            raise ValueError("means and stds must be nonempty and of equal length")
        if any(not s > 0 for s in self.stds):
            raise ValueError("stds must be positive")

    @property
    def weights(self) -> NDArray:
        k = len(self.means)
        return np.full(k, 1.0 / k)

    def _norms(self) -> NDArray:
        mu, s = np.asarray(self.means), np.asarray(self.stds)
        return ndtr((1.0 - mu) / s) - ndtr(-mu / s)

    def pdf(self, x) -> NDArray:
        x = np.asarray(x, dtype=float)
        mu, s = np.asarray(self.means), np.asarray(self.stds)
        z = (x[..., None] - mu) / s
        dens = np.exp(-0.5 * z * z) / (s * _SQRT2PI) / self._norms()
        inside = (x >= 0.0) & (x <= 1.0)
        return np.where(inside, dens @ self.weights, 0.0)


def draw_trunc_gauss_mixture(seed, var_range=(0.05, 0.1), n_components: int = 2) -> TruncGaussMixture:
    """Means uniform on ``[0, 1]``, variances uniform on ``var_range``."""
    rng = _rng(seed)
    means = rng.uniform(0.0, 1.0, n_components)
    var = rng.uniform(var_range[0], var_range[1], n_components)
    return TruncGaussMixture(tuple(means), tuple(np.sqrt(var)))


def sample_trunc_gauss_mixture(P: TruncGaussMixture, n: int, seed) -> NDArray:
    """``n`` points on ``[0, 1]`` by rejection from the untruncated components."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    mu, s = np.asarray(P.means), np.asarray(P.stds)
    comp = rng.integers(0, len(mu), n)
    out = rng.normal(mu[comp], s[comp])
    bad = (out < 0.0) | (out > 1.0)
    while bad.any():
        out[bad] = rng.normal(mu[comp[bad]], s[comp[bad]])
        bad = (out < 0.0) | (out > 1.0)
    return out[:, None]


def _pair_products(mu1, s1, z1, mu2, s2, z2) -> NDArray:
    """``int_0^1 N(x; mu1, s1) N(x; mu2, s2) dx / (z1 z2)`` with broadcasting."""
    v = s1 * s1 + s2 * s2
    peak = np.exp(-0.5 * (mu1 - mu2) ** 2 / v) / np.sqrt(2.0 * np.pi * v)
    m = (mu1 * s2 * s2 + mu2 * s1 * s1) / v
    s = s1 * s2 / np.sqrt(v)
    mass = ndtr((1.0 - m) / s) - ndtr(-m / s)
    return peak * mass / (z1 * z2)


def _mixture_arrays(mixtures):
    mu = np.array([m.means for m in mixtures], dtype=float)
    s = np.array([m.stds for m in mixtures], dtype=float)
    z = ndtr((1.0 - mu) / s) - ndtr(-mu / s)
    w = np.array([m.weights for m in mixtures], dtype=float)
    return mu, s, z, w


def mixture_inner_products(left, right) -> NDArray:
    """Matrix of ``<p_i, q_j>`` in closed form for lists of mixtures."""
    mu1, s1, z1, w1 = _mixture_arrays(left)
    mu2, s2, z2, w2 = _mixture_arrays(right)
    # axes: (i, j, component_i, component_j)
    prod = _pair_products(mu1[:, None, :, None], s1[:, None, :, None], z1[:, None, :, None],
                          mu2[None, :, None, :], s2[None, :, None, :], z2[None, :, None, :])
    return np.einsum("ia,jb,ijab->ij", w1, w2, prod)


def squared_norms(mixtures) -> NDArray:
    """``||p_i||_2^2`` for each mixture in a list."""
    mu, s, z, w = _mixture_arrays(mixtures)
    prod = _pair_products(mu[:, :, None], s[:, :, None], z[:, :, None],
                          mu[:, None, :], s[:, None, :], z[:, None, :])
    return np.einsum("ia,ib,iab->i", w, w, prod)


def l2_distance_closed_form(left, right) -> NDArray:
    """Matrix of ``||p_i - q_j||_2`` between truncated mixtures."""
    cross = mixture_inner_products(left, right)
    nl = squared_norms(left)
    nr = squared_norms(right)
    return np.sqrt(np.maximum(nl[:, None] + nr[None, :] - 2.0 * cross, 0.0))


def l2_distance_quad(g: TruncGaussMixture, p: TruncGaussMixture, tol: float = 1e-10) -> float:
    """``||g - p||_2`` by adaptive quadrature; raises on non-convergence."""
    f = lambda x: (g.pdf(x) - p.pdf(x)) ** 2
    breaks = sorted({min(max(m, 0.0), 1.0) for m in g.means + p.means})
    val, err, info = integrate.quad(f, 0.0, 1.0, epsabs=tol, epsrel=1e-12, limit=500,
                                    points=breaks, full_output=1)[:3]
    if err > 1e-8:
        raise NumericError(f"quadrature did not reach 1e-8 (estimate {err:.3g}, "
                           f"{info.get('last', '?')} subintervals)")
    return math.sqrt(max(val, 0.0))


@dataclass(frozen=True)
class GroundTruthMap:
    """``f(P) = sum_i theta_i K_sigma(||g_i - p||_2)`` with an RBF profile."""

    thetas: tuple[float, ...]
    components: tuple[TruncGaussMixture, ...]
    bandwidth: float = 1.0

    def __post_init__(self):
        if len(self.thetas) != len(self.components):
            raise ValueError("one theta per component is required")

    @property
    def bound(self) -> float:
        return float(np.sum(np.abs(self.thetas)))

    def evaluate(self, mixtures) -> NDArray:
        """Closed-form ``f`` for a list of mixtures (fast path for datasets)."""
        d = l2_distance_closed_form(list(self.components), list(mixtures))
        k = np.exp(-0.5 * (d / self.bandwidth) ** 2)
        return np.asarray(self.thetas) @ k


def draw_ground_truth(seed, n_components: int = 10, var_range=(0.05, 0.1),
                      theta_range=(-5.0, 5.0), bandwidth: float = 1.0) -> GroundTruthMap:
    rng = _rng(seed)
    thetas = rng.uniform(theta_range[0], theta_range[1], n_components)
    comps = tuple(draw_trunc_gauss_mixture(rng, var_range) for _ in range(n_components))
    return GroundTruthMap(tuple(thetas), comps, float(bandwidth))


def eval_f_true(fmap: GroundTruthMap, P: TruncGaussMixture, method: str = "quad") -> float:
    """Ground-truth response; ``method="quad"`` integrates numerically, ``"closed"`` exactly."""
    if method == "closed":
        return float(fmap.evaluate([P])[0])
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    total = 0.0
    for theta, g in zip(fmap.thetas, fmap.components):
        d = l2_distance_quad(g, P)
        total += theta * math.exp(-0.5 * (d / fmap.bandwidth) ** 2)
    return total


def samples_per_set(N: int, c: float = 1.0) -> int:
    """``ceil(c N^{3/5})`` points per sample set."""
    return int(math.ceil(c * N ** 0.6))


# ---------------------------------------------------------------------------
# Gaussian mixtures in the plane


@dataclass(frozen=True)
class GmmSpec:
    weights: NDArray
    means: NDArray
    covariances: NDArray
    # the drawn a and diag(B) per component, kept for provenance
    scales: NDArray | None = None
    jitters: NDArray | None = None

    @property
    def k(self) -> int:
        return len(self.weights)


def draw_gmm(seed, k: int | None = None, k_range=(1, 10)) -> GmmSpec:
    """Random 2-D mixture: ``Sigma_j = a^2 A A^T + B`` with ``a ~ U[1,2]``,
    ``A_uv ~ U[-1,1]`` and diagonal ``B_uu ~ U[0,1]``."""
    rng = _rng(seed)
    if k is None:
        k = int(rng.integers(k_range[0], k_range[1] + 1))
    means = rng.uniform(-5.0, 5.0, (k, 2))
    covs = np.empty((k, 2, 2))
    scales = np.empty(k)
    jitters = np.empty((k, 2))
    for j in range(k):
        a = rng.uniform(1.0, 2.0)
        A = rng.uniform(-1.0, 1.0, (2, 2))
        jitters[j] = rng.uniform(0.0, 1.0, 2)
        scales[j] = a
        covs[j] = a * a * A @ A.T + np.diag(jitters[j])
    return GmmSpec(np.full(k, 1.0 / k), means, covs, scales, jitters)


def sample_gmm(spec: GmmSpec, n: int, seed) -> NDArray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    comp = rng.integers(0, spec.k, n)
    L = np.linalg.cholesky(spec.covariances)
    z = rng.standard_normal((n, 2))
    return spec.means[comp] + np.einsum("nij,nj->ni", L[comp], z)


# ---------------------------------------------------------------------------
# Dirichlet


@dataclass(frozen=True)
class DirichletSpec:
    alpha: NDArray

    @property
    def d(self) -> int:
        return len(self.alpha)


def draw_dirichlet_spec(seed, d: int = 3, alpha_range=(0.1, 10.0)) -> DirichletSpec:
    rng = _rng(seed)
    return DirichletSpec(rng.uniform(alpha_range[0], alpha_range[1], d))


def sample_dirichlet(spec: DirichletSpec, n: int, seed, full: bool = False) -> NDArray:
    """Normalised Gamma draws; returns the first ``d - 1`` coordinates unless ``full``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.d < 2:
        raise ValueError("Dirichlet dimension must be >= 2")
    rng = _rng(seed)
    g = rng.gamma(np.asarray(spec.alpha), size=(n, spec.d))
    x = g / g.sum(axis=1, keepdims=True)
    return x if full else x[:, :-1]


def complete_simplex(points: NDArray) -> NDArray:
    """Append the redundant last coordinate to first-``d-1`` Dirichlet points."""
    points = np.asarray(points, dtype=float)
    return np.column_stack([points, np.clip(1.0 - points.sum(axis=1), 0.0, 1.0)])


# ---------------------------------------------------------------------------
# a fixed smooth density with known cosine coefficients


@dataclass(frozen=True)
class CosineSeriesDensity:
    """``p(u) = 1 + sum_j c_j sqrt(2) cos(pi j u)`` on ``[0, 1]`` (j = 1..len(c))."""

    coefficients: tuple[float, ...]

    @classmethod
    def polynomial_decay(cls, amplitude: float = 0.5, power: float = 3.0, terms: int = 50):
        return cls(tuple(amplitude * j ** -power for j in range(1, terms + 1)))

    def pdf(self, u) -> NDArray:
        u = np.asarray(u, dtype=float)
        j = np.arange(1, len(self.coefficients) + 1)
        return 1.0 + (math.sqrt(2.0) * np.cos(np.pi * u[..., None] * j)) @ np.asarray(self.coefficients)

    @property
    def sup(self) -> float:
        return 1.0 + math.sqrt(2.0) * float(np.sum(np.abs(self.coefficients)))

    def coefficient(self, j: int) -> float:
        if j == 0:
            return 1.0
        return self.coefficients[j - 1] if j <= len(self.coefficients) else 0.0

    def sample(self, n: int, seed) -> NDArray:
        rng = _rng(seed)
        out = np.empty(0)
        while out.size < n:
            u = rng.uniform(0.0, 1.0, 2 * n)
            keep = rng.uniform(0.0, self.sup, 2 * n) < self.pdf(u)
            out = np.concatenate([out, u[keep]])
        return out[:n, None]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Sample sets with responses; points are stored in raw coordinates."""

    kind: str
    sets: list[NDArray]
    responses: NDArray
    transform: DomainTransform
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sets)

    @property
    def dim(self) -> int:
        return self.sets[0].shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.kind, [self.sets[i] for i in index], self.responses[index],
                       self.transform, dict(self.meta))


def transform_for(kind: str, d: int = 3) -> DomainTransform:
    if kind == "synthetic-map":
        return DomainTransform.unit(1)
    if kind == "gmm-modelsel":
        return DomainTransform((-GMM_BOX, -GMM_BOX), (GMM_BOX, GMM_BOX), clip=True)
    if kind == "dirichlet":
        return DomainTransform.unit(d - 1)
    raise ValueError(f"unknown experiment kind {kind!r}")


def make_dataset(kind: str, N: int, n: int, seed: int, stream: int = 0, *,
                 truth: GroundTruthMap | None = None, var_range=(0.05, 0.1),
                 k_range=(1, 10), d: int = 3, alpha_range=(0.1, 10.0),
                 noise_std: float = 0.0) -> Dataset:
    """Generate ``N`` instances of ``n`` points each.

    ``stream`` separates independent datasets (train, test, ...) drawn under
    one seed.  For ``synthetic-map`` the ground-truth map is drawn from
    ``seed`` alone unless supplied, so train and test share it.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    if N < 1 or n < 1:
        raise ValueError("N and n must be >= 1")
    children = np.random.SeedSequence([int(seed), int(stream)]).spawn(N)
    meta = {"kind": kind, "seed": int(seed), "stream": int(stream), "N": int(N), "n": int(n)}
    sets: list[NDArray] = []
    if kind == "synthetic-map":
        if truth is None:
            truth = draw_ground_truth(np.random.SeedSequence([int(seed), 2**31 - 1]),
                                      var_range=var_range)
        mixtures = []
        for child in children:
            rng = np.random.default_rng(child)
            P = draw_trunc_gauss_mixture(rng, var_range)
            mixtures.append(P)
            sets.append(sample_trunc_gauss_mixture(P, n, rng))
        responses = truth.evaluate(mixtures)
        meta.update(var_range=list(var_range), thetas=list(truth.thetas))
    elif kind == "gmm-modelsel":
        ks = []
        for child in children:
            rng = np.random.default_rng(child)
            spec = draw_gmm(rng, k_range=k_range)
            ks.append(spec.k)
            sets.append(sample_gmm(spec, n, rng))
        responses = np.asarray(ks, dtype=float)
        meta.update(k_range=list(k_range))
    else:
        alphas = []
        for child in children:
            rng = np.random.default_rng(child)
            spec = draw_dirichlet_spec(rng, d, alpha_range)
            alphas.append(spec.alpha)
            sets.append(sample_dirichlet(spec, n, rng))
        responses = np.asarray(alphas)
        meta.update(d=int(d), alpha_range=list(alpha_range))
    if noise_std > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), 7]))
        responses = responses + noise_rng.normal(0.0, noise_std, responses.shape)
    meta["noise_std"] = float(noise_std)
    return Dataset(kind, sets, np.asarray(responses, dtype=float), transform_for(kind, d), meta)
