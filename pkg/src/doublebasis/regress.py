"""Double-Basis and Kernel-Kernel estimators for distribution-to-real regression.

Both estimators see a sample set only through its projection coefficients
(:mod:`doublebasis.basis`).  The Double-Basis estimator maps coefficients
through random Fourier features and fits a linear model there, so a
prediction costs the same whatever the training-set size.  The Kernel-Kernel
smoother keeps every training coefficient vector and averages responses with
kernel weights, so its cost grows linearly in the number of training sets.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from doublebasis.basis import (
    BasisConfig,
    DomainTransform,
    MultiIndexSet,
    SamplesLike,
    _check_unit,
    _mean_design,
    as_points,
    choose_truncation,
    coefficient_matrix,
    enumerate_index_set,
)
from doublebasis.errors import DataError, NumericError
from doublebasis.rks import FeatureMap, choose_feature_count, draw_feature_map

log = logging.getLogger(__name__)

KernelKind = Literal["rbf", "bounded"]
STATIONARITY_RTOL = 1e-6


@dataclass
class SolveInfo:
    method: str
    rank_deficient: bool
    stationarity: float


def stationarity_residual(Z: NDArray, Y: NDArray, psi: NDArray, lam: float) -> float:
    """``||Z^T (Y - Z psi) - lam psi||_inf`` scaled by ``1 + ||Z^T Y||_inf``."""
    g = Z.T @ (Y - Z @ psi) - lam * psi
    return float(np.max(np.abs(g)) / (1.0 + np.max(np.abs(Z.T @ Y))))


def _lstsq(Z, Y):
    psi, _, rank, _ = scipy.linalg.lstsq(Z, Y, lapack_driver="gelsd")
    return psi, int(rank)


def solve_ridge(Z: ArrayLike, Y: ArrayLike, lam: float = 0.0, *,
                gram: NDArray | None = None, zty: NDArray | None = None
                ) -> tuple[NDArray, SolveInfo]:
    """Minimise ``||Y - Z psi||^2 + lam ||psi||^2``.

    Uses a Cholesky factorisation of the regularised normal matrix.  With
    ``lam == 0`` and a singular or badly conditioned Gram matrix it falls back
    to the minimum-norm least-squares solution and flags it.  ``Y`` may be 2-D
    for several responses sharing one design.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"ridge penalty must be non-negative, got {lam}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("responses must be finite")
    N, D = Z.shape
    if lam == 0.0 and N < D:
        psi, rank = _lstsq(Z, Y)
        return psi, SolveInfo("lstsq", True, stationarity_residual(Z, Y, psi, lam))

    G = Z.T @ Z if gram is None else gram.copy()
    b = Z.T @ Y if zty is None else zty
    G[np.diag_indices_from(G)] += lam
    try:
        factor = scipy.linalg.cho_factor(G, lower=False, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        ill = lam == 0.0 and diag.min() <= 1e-7 * diag.max()
        psi = scipy.linalg.cho_solve(factor, b, check_finite=False)
    except np.linalg.LinAlgError:
        ill, psi = True, None
    if psi is not None and not ill:
        res = stationarity_residual(Z, Y, psi, lam)
        if res < STATIONARITY_RTOL:
            return psi, SolveInfo("cholesky", False, res)
    if lam > 0:
        # augmented least squares is the stable route when cholesky struggles
        Za = np.vstack([Z, math.sqrt(lam) * np.eye(D)])
        Ya = np.concatenate([Y, np.zeros((D,) + Y.shape[1:])])
        psi, _ = _lstsq(Za, Ya)
        res = stationarity_residual(Z, Y, psi, lam)
        return psi, SolveInfo("lstsq-augmented", False, res)
    psi, rank = _lstsq(Z, Y)
    res = stationarity_residual(Z, Y, psi, lam)
    return psi, SolveInfo("lstsq", rank < D, res)


def solve_ols(Z: ArrayLike, Y: ArrayLike) -> tuple[NDArray, SolveInfo]:
    return solve_ridge(Z, Y, 0.0)


def truncate(x, bound):
    """``sign(x) min(|x|, B)``."""
    return np.clip(x, -bound, bound)


def _unit_points(samples: SamplesLike, transform: DomainTransform, dim: int) -> NDArray:
    pts = as_points(samples)
    if pts.shape[0] == 0:
        raise ValueError("cannot predict from an empty sample set")
    if pts.shape[1] != dim:
        raise DataError(f"sample dimension {pts.shape[1]} does not match expected l={dim}")
    u = transform.to_unit(pts)
    _check_unit(u)
    return u


@dataclass(frozen=True)
class DoubleBasisModel:
    """Fitted Double-Basis estimator.

    ``weights`` has shape ``(D,)`` for a scalar response or ``(D, m)`` for
    ``m`` responses fitted jointly on one feature map.
    """

    index_set: MultiIndexSet
    feature_map: FeatureMap
    weights: NDArray
    ridge: float
    bound: NDArray | float
    transform: DomainTransform
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        # C order keeps the prediction matmul identical after a save/load round trip
        w = np.array(self.weights, dtype=float, order="C")
        if w.shape[0] != self.feature_map.n_features:
            raise ValueError(f"weights length {w.shape[0]} != feature count {self.feature_map.n_features}")
        if self.feature_map.input_dim != len(self.index_set):
            raise ValueError("feature map input dimension must equal the index set size")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        bound = np.array(self.bound, dtype=float)
        if np.any(bound <= 0):
            raise ValueError("response bound must be positive")
        w.setflags(write=False)
        bound.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bound", bound)

    @property
    def config(self) -> BasisConfig:
        return self.index_set.config

    @property
    def n_outputs(self) -> int:
        return 1 if self.weights.ndim == 1 else self.weights.shape[1]

    def features(self, samples: SamplesLike) -> NDArray:
        u = _unit_points(samples, self.transform, self.config.dim)
        coeffs = _mean_design(u, self.index_set)
        return self.feature_map.transform(coeffs)

    def raw_predict(self, samples: SamplesLike):
        out = self.features(samples) @ self.weights
        return float(out) if out.ndim == 0 else out

    def predict(self, samples: SamplesLike, truncate_output: bool = True):
        z = self.features(samples) @ self.weights
        if truncate_output:
            z = np.clip(z, -self.bound, self.bound)
        return float(z) if z.ndim == 0 else z

    def predict_coefficients(self, coeffs: NDArray, truncate_output: bool = True) -> NDArray:
        """Batch prediction from an ``(N, S)`` coefficient matrix."""
        out = self.feature_map.transform(coeffs) @ self.weights
        return np.clip(out, -self.bound, self.bound) if truncate_output else out

    def predict_many(self, sample_sets: Sequence[SamplesLike], truncate_output: bool = True) -> NDArray:
        A = coefficient_matrix([self.transform.to_unit(as_points(s)) for s in sample_sets],
                               self.index_set)
        return self.predict_coefficients(A, truncate_output)


def predict(model: DoubleBasisModel, samples: SamplesLike, truncate_output: bool = True):
    return model.predict(samples, truncate_output)


def _prepare(sample_sets, transform, config):
    if transform is None:
        transform = DomainTransform.unit(config.dim)
    unit = [transform.to_unit(as_points(s)) for s in sample_sets]
    return unit, transform


def fit_double_basis_coefficients(A: NDArray, Y: ArrayLike, index_set: MultiIndexSet,
                                  n_features: int, bandwidth: float, ridge: float = 0.0,
                                  seed: int = 0, transform: DomainTransform | None = None,
                                  bound=None, meta: dict | None = None) -> DoubleBasisModel:
    """Fit from an already computed ``(N, S)`` coefficient matrix."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] < 1 or Y.shape[0] != A.shape[0]:
        raise ValueError(f"need one response per training set, got {Y.shape[0]} for {A.shape[0]}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("responses must be finite")
    fmap = draw_feature_map(len(index_set), n_features, bandwidth, seed)
    Z = fmap.transform(A)
    psi, info = solve_ridge(Z, Y, ridge)
    if bound is None:
        bound = np.max(np.abs(Y), axis=0)
        bound = np.where(bound > 0, bound, 1.0)
    if transform is None:
        transform = DomainTransform.unit(index_set.config.dim)
    meta = dict(meta or {})
    meta.update(N=int(A.shape[0]), solver=info.method, rank_deficient=info.rank_deficient,
                stationarity=info.stationarity, feature_seed=int(seed))
    return DoubleBasisModel(index_set, fmap, psi, float(ridge), bound, transform, meta)


def fit_double_basis(sample_sets: Sequence[SamplesLike], responses: ArrayLike,
                     config: BasisConfig, t: float, n_features: int, bandwidth: float = 1.0,
                     ridge: float = 0.0, seed: int = 0, transform: DomainTransform | None = None,
                     bound=None) -> DoubleBasisModel:
    """Fit the (ridge) Double-Basis estimator on raw sample sets.

    ``ridge=0`` gives the ordinary least-squares estimator.  The response
    bound used to truncate predictions defaults to ``max |Y|``.
    """
    if len(sample_sets) < 1:
        raise ValueError("need at least one training set")
    unit, transform = _prepare(sample_sets, transform, config)
    idx = enumerate_index_set(config, t)
    A = coefficient_matrix(unit, idx)
    n = int(np.median([len(u) for u in unit]))
    return fit_double_basis_coefficients(A, responses, idx, n_features, bandwidth, ridge, seed,
                                         transform, bound, meta={"n": n, "t": float(t)})


@dataclass(frozen=True)
class KernelKernelModel:
    """Kernel smoother over stored training coefficient vectors."""

    index_set: MultiIndexSet
    coefficients: NDArray
    responses: NDArray
    bandwidth: float
    kernel: KernelKind = "rbf"
    transform: DomainTransform | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.array(self.coefficients, dtype=float)
        Y = np.array(self.responses, dtype=float)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] != len(self.index_set):
            raise ValueError(f"coefficients must have shape (N>=1, {len(self.index_set)}), got {A.shape}")
        if Y.shape[0] != A.shape[0]:
            raise ValueError("need one response per stored coefficient vector")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.kernel not in ("rbf", "bounded"):
            raise ValueError(f"unknown kernel kind {self.kernel!r}")
        A.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "coefficients", A)
        object.__setattr__(self, "responses", Y)
        if self.transform is None:
            object.__setattr__(self, "transform", DomainTransform.unit(self.index_set.config.dim))

    @property
    def n_outputs(self) -> int:
        return 1 if self.responses.ndim == 1 else self.responses.shape[1]

    def kernel_values(self, distances: NDArray) -> NDArray:
        u2 = (distances / self.bandwidth) ** 2
        if self.kernel == "rbf":
            return np.exp(-0.5 * u2)
        return np.maximum(1.0 - u2, 0.0)

    def weights(self, coeffs: NDArray) -> NDArray:
        """Normalised smoother weights for one query (all zero if the normaliser is 0)."""
        d = np.sqrt(np.sum((self.coefficients - coeffs) ** 2, axis=1))
        k = self.kernel_values(d)
        s = k.sum()
        return k / s if s > 0 else np.zeros_like(k)

    def predict_coefficients(self, coeffs: NDArray):
        out = self.weights(coeffs) @ self.responses
        return float(out) if np.ndim(out) == 0 else out

    def predict(self, samples: SamplesLike):
        u = _unit_points(samples, self.transform, self.index_set.config.dim)
        return self.predict_coefficients(_mean_design(u, self.index_set))

    def predict_many_coefficients(self, Q: NDArray, chunk: int = 256) -> NDArray:
        """Vectorised batch prediction for an ``(M, S)`` query matrix."""
        Q = np.asarray(Q, dtype=float)
        out = np.empty((Q.shape[0],) + self.responses.shape[1:])
        sq = np.sum(self.coefficients ** 2, axis=1)
        for s in range(0, Q.shape[0], chunk):
            q = Q[s:s + chunk]
            d2 = np.maximum(sq[None, :] - 2.0 * q @ self.coefficients.T
                            + np.sum(q ** 2, axis=1)[:, None], 0.0)
            k = self.kernel_values(np.sqrt(d2))
            tot = k.sum(axis=1)
            safe = np.where(tot > 0, tot, 1.0)
            pred = (k @ self.responses) / (safe if self.responses.ndim == 1 else safe[:, None])
            pred[tot <= 0] = 0.0
            out[s:s + chunk] = pred
        return out

    def predict_many(self, sample_sets: Sequence[SamplesLike]) -> NDArray:
        A = coefficient_matrix([self.transform.to_unit(as_points(s)) for s in sample_sets],
                               self.index_set)
        return self.predict_many_coefficients(A)


def kk_fit(sample_sets: Sequence[SamplesLike], responses: ArrayLike, config: BasisConfig,
           t: float, bandwidth: float, kernel: KernelKind = "rbf",
           transform: DomainTransform | None = None) -> KernelKernelModel:
    """Store the coefficient vectors and responses of every training set."""
    if len(sample_sets) < 1:
        raise ValueError("need at least one training set")
    unit, transform = _prepare(sample_sets, transform, config)
    idx = enumerate_index_set(config, t)
    A = coefficient_matrix(unit, idx)
    return KernelKernelModel(idx, A, np.asarray(responses, dtype=float), float(bandwidth),
                             kernel, transform, meta={"N": len(unit), "t": float(t)})


def kk_predict(model: KernelKernelModel, samples: SamplesLike):
    return model.predict(samples)


def mse(pred: ArrayLike, truth: ArrayLike) -> float:
    """Mean squared error, averaged over sets and (if present) output coordinates."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.mean((pred - truth) ** 2))


@dataclass
class Selection:
    best: dict
    best_score: float
    scores: list[tuple[dict, float]]


def _grid_n(unit_sets) -> int:
    return int(np.median([len(u) for u in unit_sets]))


def select_bb_hyperparameters(train_sets, train_Y, val_sets, val_Y, config: BasisConfig,
                              C_grid: Iterable[float] = (1.0,),
                              sigma_grid: Iterable[float] = (1.0,),
                              ridge_grid: Iterable[float] = (0.0,),
                              D_grid: Iterable = ("auto",), seed: int = 0,
                              transform: DomainTransform | None = None,
                              feature_c: float = 1.0,
                              cost_tolerance: float = 0.0) -> Selection:
    """Grid search for the Double-Basis estimator on a train/validation split.

    Grid order is ``C`` outermost, then ``D``, ``sigma``, ``ridge``; the first
    grid point attaining the minimum validation MSE wins.  ``"auto"`` in the
    ``D`` grid means ``choose_feature_count(n, feature_c)``.

    With ``cost_tolerance > 0`` every grid point whose validation MSE is within
    that relative margin of the minimum is a candidate, and the one with the
    lowest per-query cost ``D (S + 1) + S n`` wins (ties by score, then grid
    order).  This keeps the evaluation cost from drifting up for gains that
    are within validation noise.
    """
    if cost_tolerance < 0:
        raise ValueError("cost_tolerance must be non-negative")
    if len(val_sets) == 0:
        raise ValueError("validation split is empty")
    C_grid, sigma_grid, ridge_grid, D_grid = map(list, (C_grid, sigma_grid, ridge_grid, D_grid))
    if not (C_grid and sigma_grid and ridge_grid and D_grid):
        raise ValueError("hyperparameter grids must be nonempty")
    tr, transform = _prepare(train_sets, transform, config)
    va, _ = _prepare(val_sets, transform, config)
    Ytr = np.asarray(train_Y, dtype=float)
    Yva = np.asarray(val_Y, dtype=float)
    n = _grid_n(tr)
    bound = np.max(np.abs(Ytr), axis=0)
    bound = np.where(bound > 0, bound, 1.0)
    scores: list[tuple[dict, float]] = []
    costs: list[int] = []
    best, best_score = None, math.inf
    for C in C_grid:
        t = choose_truncation(n, config, C)
        idx = enumerate_index_set(config, t)
        Atr = coefficient_matrix(tr, idx)
        Ava = coefficient_matrix(va, idx)
        S = len(idx)
        for D in D_grid:
            Dn = choose_feature_count(max(n, 2), feature_c) if D == "auto" else int(D)
            for sigma in sigma_grid:
                fmap = draw_feature_map(len(idx), Dn, sigma, seed)
                Ztr = fmap.transform(Atr)
                Zva = fmap.transform(Ava)
                G = Ztr.T @ Ztr
                b = Ztr.T @ Ytr
                for lam in ridge_grid:
                    psi, _ = solve_ridge(Ztr, Ytr, lam, gram=G, zty=b)
                    score = mse(np.clip(Zva @ psi, -bound, bound), Yva)
                    params = {"C": float(C), "t": float(t), "D": Dn, "sigma": float(sigma),
                              "ridge": float(lam)}
                    scores.append((params, score))
                    costs.append(Dn * (S + 1) + S * n)
                    log.debug("bb %s -> %.6g", params, score)
                    if score < best_score:
                        best, best_score = params, score
    if cost_tolerance > 0:
        limit = best_score * (1.0 + cost_tolerance)
        pick = min((i for i, (_, sc) in enumerate(scores) if sc <= limit),
                   key=lambda i: (costs[i], scores[i][1], i))
        best, best_score = scores[pick]
    return Selection(best, best_score, scores)


def select_kk_hyperparameters(train_sets, train_Y, val_sets, val_Y, config: BasisConfig,
                              C_grid: Iterable[float] = (1.0,),
                              sigma_grid: Iterable[float] = (1.0,),
                              kernel: KernelKind = "rbf",
                              transform: DomainTransform | None = None) -> Selection:
    """Grid search over truncation constant and smoother bandwidth."""
    if len(val_sets) == 0:
        raise ValueError("validation split is empty")
    C_grid, sigma_grid = list(C_grid), list(sigma_grid)
    if not (C_grid and sigma_grid):
        raise ValueError("hyperparameter grids must be nonempty")
    tr, transform = _prepare(train_sets, transform, config)
    va, _ = _prepare(val_sets, transform, config)
    Ytr = np.asarray(train_Y, dtype=float)
    Yva = np.asarray(val_Y, dtype=float)
    n = _grid_n(tr)
    scores: list[tuple[dict, float]] = []
    best, best_score = None, math.inf
    for C in C_grid:
        t = choose_truncation(n, config, C)
        idx = enumerate_index_set(config, t)
        Atr = coefficient_matrix(tr, idx)
        Ava = coefficient_matrix(va, idx)
        for sigma in sigma_grid:
            model = KernelKernelModel(idx, Atr, Ytr, float(sigma), kernel, transform)
            score = mse(model.predict_many_coefficients(Ava), Yva)
            params = {"C": float(C), "t": float(t), "sigma_kk": float(sigma), "kernel": kernel}
            scores.append((params, score))
            if score < best_score:
                best, best_score = params, score
    return Selection(best, best_score, scores)


def select_hyperparameters(grid: Sequence[dict], evaluate) -> Selection:
    """Generic argmin over an explicit list of configurations.

    ``evaluate(params) -> validation MSE``; ties go to the earliest entry.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("hyperparameter grid must be nonempty")
    scores = [(dict(p), float(evaluate(p))) for p in grid]
    best_i = min(range(len(scores)), key=lambda i: (scores[i][1], i))
    return Selection(scores[best_i][0], scores[best_i][1], scores)


def grid_product(**axes) -> list[dict]:
    keys = list(axes)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys))]
