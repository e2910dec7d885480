"""Classical statistical baselines: EM-fitted Gaussian mixtures with
AIC / BIC / holdout model selection, and Dirichlet maximum likelihood."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import digamma, gammaln, logsumexp, polygamma

COV_REG = 1e-6
SIMPLEX_FLOOR = 1e-10
# Dirichlet estimates are capped here; near-identical points drive the MLE to infinity
ALPHA_MAX = 1e6
Criterion = Literal["aic", "bic", "cv"]


@dataclass
class FittedGmm:
    k: int
    weights: NDArray
    means: NDArray
    covariances: NDArray
    log_likelihood: float
    n_iter: int
    converged: bool
    trace: list[float] = field(default_factory=list, repr=False)

    def log_pdf(self, X: ArrayLike) -> NDArray:
        return logsumexp(_component_logpdf(np.asarray(X, dtype=float), self.weights,
                                           self.means, self.covariances), axis=1)

    @property
    def n_free_parameters(self) -> int:
        return free_parameters(self.k, self.means.shape[1])


def free_parameters(k: int, d: int = 2) -> int:
    """Means, full covariances and ``k - 1`` mixing weights (``6k - 1`` for d = 2)."""
    return k * (d + d * (d + 1) // 2) + k - 1


def _component_logpdf(X, weights, means, covs) -> NDArray:
    """``log pi_j + log N(x_i; mu_j, Sigma_j)`` as an ``(n, k)`` array."""
    d = X.shape[1]
    if d == 2:
        a, b, c = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]
        det = a * c - b * b
        dx = X[:, 0][:, None] - means[:, 0]
        dy = X[:, 1][:, None] - means[:, 1]
        maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
        return np.log(weights) - 0.5 * (maha + np.log(det)) - math.log(2.0 * math.pi)
    L = np.linalg.cholesky(covs)                               # (k, d, d)
    diff = X[None, :, :] - means[:, None, :]                   # (k, n, d)
    sol = np.linalg.solve(L, diff.transpose(0, 2, 1))          # (k, d, n)
    maha = np.sum(sol * sol, axis=1)                           # (k, n)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    logn = -0.5 * (maha + logdet[:, None] + d * math.log(2.0 * math.pi))
    return (logn + np.log(weights)[:, None]).T


def _logsumexp_rows(a: NDArray) -> NDArray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _weighted_covariances(X, resp, means, nk):
    if X.shape[1] == 2:
        dx = X[:, 0][:, None] - means[:, 0]
        dy = X[:, 1][:, None] - means[:, 1]
        sxx = np.sum(resp * dx * dx, axis=0)
        sxy = np.sum(resp * dx * dy, axis=0)
        syy = np.sum(resp * dy * dy, axis=0)
        return np.stack([np.stack([sxx, sxy], -1), np.stack([sxy, syy], -1)], -2) / nk[:, None, None]
    diff = X[None, :, :] - means[:, None, :]
    return np.einsum("kn,kni,knj->kij", resp.T, diff, diff) / nk[:, None, None]


def _em_run(X, k, rng, max_iter, tol, reg):
    n, d = X.shape
    eye = np.eye(d)
    means = X[rng.choice(n, k, replace=False)].copy()
    base = np.cov(X, rowvar=False, bias=True).reshape(d, d) + reg * eye
    covs = np.repeat(base[None], k, axis=0)
    weights = np.full(k, 1.0 / k)
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        logp = _component_logpdf(X, weights, means, covs)
        lse = _logsumexp_rows(logp)
        ll = float(lse.sum())
        if trace and ll - trace[-1] < tol * abs(trace[-1]):
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        resp = np.exp(logp - lse[:, None])
        nk = np.maximum(resp.sum(axis=0), 10 * np.finfo(float).eps)
        weights = nk / nk.sum()
        means = (resp.T @ X) / nk[:, None]
        covs = _weighted_covariances(X, resp, means, nk) + reg * eye
    if not converged:
        # log-likelihood of the parameters actually returned
        trace.append(float(_logsumexp_rows(_component_logpdf(X, weights, means, covs)).sum()))
    return FittedGmm(k, weights, means, covs, trace[-1], it, converged, trace)


def em_fit(X: ArrayLike, k: int, restarts: int = 5, max_iter: int = 200, tol: float = 1e-6,
           seed: int = 0, reg: float = COV_REG) -> FittedGmm:
    """Best-of-``restarts`` EM fit of a ``k``-component full-covariance mixture.

    Each restart initialises the means at distinct random data points.  A run
    stops once the relative log-likelihood gain drops below ``tol``; ``reg``
    is added to every covariance at each M-step.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be an (n, d) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts if k > 1 else 1)):
        fit = _em_run(X, k, rng, max_iter, tol, reg)
        if best is None or fit.log_likelihood > best.log_likelihood:
            best = fit
    return best


def information_criterion(log_likelihood: float, k: int, n: int, criterion: str, d: int = 2) -> float:
    nu = free_parameters(k, d)
    if criterion == "aic":
        return 2.0 * nu - 2.0 * log_likelihood
    if criterion == "bic":
        return nu * math.log(n) - 2.0 * log_likelihood
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass
class ModelSelectionResult:
    k: int
    criterion: str
    scores: dict[int, float]
    wall_time: float
    log_likelihoods: dict[int, float] = field(default_factory=dict)
    n: int = 0


def select_k(X: ArrayLike, k_range: Iterable[int] = range(1, 11), criterion: Criterion = "bic",
             seed: int = 0, holdout: float = 0.2, restarts: int = 5, max_iter: int = 200,
             tol: float = 1e-6) -> ModelSelectionResult:
    """Choose the number of mixture components.

    AIC and BIC are minimised; the holdout criterion ``"cv"`` maximises the
    mean held-out log-likelihood of a fit on the remaining points.  Ties go
    to the smaller ``k``.
    """
    t0 = time.perf_counter()
    X = np.asarray(X, dtype=float)
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 1 or ks[-1] > 10:
        raise ValueError("k range must be a nonempty subset of 1..10")
    scores: dict[int, float] = {}
    lls: dict[int, float] = {}
    if criterion == "cv":
        if not 0.0 < holdout < 1.0:
            raise ValueError("holdout fraction must lie in (0, 1)")
        perm = np.random.default_rng(seed).permutation(X.shape[0])
        n_hold = int(round(holdout * X.shape[0]))
        if n_hold == 0 or n_hold == X.shape[0]:
            raise ValueError("holdout split is empty")
        hold, fit_pts = X[perm[:n_hold]], X[perm[n_hold:]]
        for k in ks:
            if k > fit_pts.shape[0]:
                continue
            fit = em_fit(fit_pts, k, restarts, max_iter, tol, seed + k)
            lls[k] = fit.log_likelihood
            scores[k] = float(np.mean(fit.log_pdf(hold)))
        best = max(scores, key=lambda k: (scores[k], -k))
    else:
        n = X.shape[0]
        for k in ks:
            if k > n:
                continue
            fit = em_fit(X, k, restarts, max_iter, tol, seed + k)
            lls[k] = fit.log_likelihood
            scores[k] = information_criterion(fit.log_likelihood, k, n, criterion, X.shape[1])
        best = min(scores, key=lambda k: (scores[k], k))
    return ModelSelectionResult(best, criterion, scores, time.perf_counter() - t0, lls, X.shape[0])


# ---------------------------------------------------------------------------
# Dirichlet maximum likelihood


@dataclass
class DirichletFit:
    alpha: NDArray
    converged: bool
    n_iter: int
    gradient_norm: float


def mean_log(points: ArrayLike) -> NDArray:
    """Sufficient statistic: per-coordinate mean of ``log x`` (floored at 1e-10)."""
    x = np.clip(np.asarray(points, dtype=float), SIMPLEX_FLOOR, 1.0)
    return np.log(x).mean(axis=0)


def dirichlet_loglik(alpha: NDArray, stat: NDArray) -> float:
    """Per-sample log-likelihood from the mean-log statistic."""
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1.0) * stat).sum())


def dirichlet_gradient(alpha: NDArray, stat: NDArray) -> NDArray:
    """Gradient of :func:`dirichlet_loglik` with respect to ``alpha``."""
    return digamma(alpha.sum()) - digamma(alpha) + stat


def inverse_digamma(y: NDArray, iters: int = 6) -> NDArray:
    y = np.asarray(y, dtype=float)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y + 0.5772156649015329))
    for _ in range(iters):
        x = x - (digamma(x) - y) / polygamma(1, x)
    return x


def _moment_init(x: NDArray) -> NDArray:
    m = x.mean(axis=0)
    m2 = (x ** 2).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.median((m - m2) / (m2 - m * m))
    if not np.isfinite(s) or s <= 0:
        s = float(x.shape[1])
    return np.maximum(s * m, 1e-3)


def dirichlet_mle(points: ArrayLike, max_iter: int = 1000, tol: float = 1e-8) -> DirichletFit:
    """Maximum-likelihood Dirichlet parameters from points on the simplex.

    Newton steps on the structured Hessian are taken when they keep ``alpha``
    positive and do not reduce the likelihood; otherwise the (always
    ascending) fixed-point update ``psi(alpha_k) = psi(sum alpha) + mean log x_k``
    is used.  Points must carry all ``d`` coordinates.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 points with d >= 2 coordinates")
    x = np.clip(x, SIMPLEX_FLOOR, 1.0)
    x = x / x.sum(axis=1, keepdims=True)
    stat = np.log(x).mean(axis=0)
    alpha = _moment_init(x)
    ll = dirichlet_loglik(alpha, stat)
    converged = False
    capped = False
    it = 0
    for it in range(1, max_iter + 1):
        g = dirichlet_gradient(alpha, stat)
        q = -polygamma(1, alpha)
        z = float(polygamma(1, alpha.sum()))
        b = np.sum(g / q) / (1.0 / z + np.sum(1.0 / q))
        new = alpha - (g - b) / q
        new_ll = dirichlet_loglik(new, stat) if np.all(new > 0) else -math.inf
        if not new_ll >= ll - 1e-12 * abs(ll):
            new = inverse_digamma(digamma(alpha.sum()) + stat)
            new_ll = dirichlet_loglik(new, stat)
        if np.any(new > ALPHA_MAX) or not np.all(np.isfinite(new)):
            alpha = np.minimum(np.nan_to_num(new, nan=ALPHA_MAX, posinf=ALPHA_MAX), ALPHA_MAX)
            capped = True
            break
        step = float(np.max(np.abs(new - alpha)))
        alpha, ll = new, new_ll
        if step < tol:
            converged = True
            break
    grad = float(np.max(np.abs(dirichlet_gradient(alpha, stat))))
    return DirichletFit(alpha, converged and not capped and grad < 10 * tol, it, grad)
