"""Experiment harness: synthesise, tune, train, evaluate, time and report.

One :class:`ExperimentConfig` describes a full run.  Every random choice is
derived from the seeds it lists, so the accuracy columns of a report are a
pure function of the configuration; only the timing columns vary between
machines and runs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from doublebasis import baselines
from doublebasis.basis import BasisConfig, coefficient_matrix, enumerate_index_set
from doublebasis.errors import DataError
from doublebasis.io import config_digest
from doublebasis.regress import (
    DoubleBasisModel,
    KernelKernelModel,
    fit_double_basis_coefficients,
    mse,
    select_bb_hyperparameters,
    select_kk_hyperparameters,
)
from doublebasis.synth import KINDS, Dataset, complete_simplex, make_dataset, samples_per_set

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_COLUMNS = ("schema_version", "experiment", "method", "N", "n", "seed", "mse",
                  "eval_time_s", "train_time_s", "config_digest", "params")
METHODS = {
    "synthetic-map": ("bb", "kk"),
    "gmm-modelsel": ("bb", "kk", "aic", "bic", "cv", "mean"),
    "dirichlet": ("bb", "kk", "mle", "mean"),
}
MIN_TIMED_QUERIES = 100


@dataclass
class ExperimentConfig:
    """Declarative description of a benchmark run.

    ``n = None`` applies the ``ceil(n_rule_c * N^{3/5})`` rule.  ``D_grid``
    entries may be ``"auto"`` for ``ceil(feature_c * n ln n)``.
    ``bb_cost_tolerance`` is passed to the Double-Basis grid search: the
    cheapest grid point within that relative margin of the best validation MSE
    is kept.
    """

    kind: str = "synthetic-map"
    N: list = field(default_factory=lambda: [1000, 10000])
    n: int | None = None
    n_rule_c: float = 1.0
    test_size: int = 2000
    val_fraction: float = 0.2
    seeds: list = field(default_factory=lambda: [0])
    repetitions: int = 3
    warmup: int = 10
    timed_queries: int = 200
    methods: list = field(default_factory=lambda: ["bb", "kk"])
    smoothness: float = 1.0
    C_grid: list = field(default_factory=lambda: [1.0])
    sigma_grid: list = field(default_factory=lambda: [1.0])
    ridge_grid: list = field(default_factory=lambda: [1e-6])
    D_grid: list = field(default_factory=lambda: ["auto"])
    feature_c: float = 1.0
    bb_cost_tolerance: float = 0.0
    kk_C_grid: list = field(default_factory=lambda: [1.0])
    kk_sigma_grid: list = field(default_factory=lambda: [0.1])
    kernel: str = "rbf"
    d: int = 3
    noise_std: float = 0.0
    em_restarts: int = 3
    em_max_iter: int = 100
    em_tol: float = 1e-6
    cv_holdout: float = 0.2
    mle_max_iter: int = 1000
    mle_tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        self.N = [int(v) for v in np.atleast_1d(self.N)]
        self.seeds = [int(v) for v in np.atleast_1d(self.seeds)]
        for name in ("N", "seeds", "methods", "C_grid", "sigma_grid", "ridge_grid", "D_grid",
                     "kk_C_grid", "kk_sigma_grid"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} must be nonempty")
        if any(v < 2 for v in self.N):
            raise ValueError("every N must be >= 2")
        bad = set(self.methods) - set(METHODS[self.kind])
        if bad:
            raise ValueError(f"methods {sorted(bad)} are not available for {self.kind}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.kernel not in ("rbf", "bounded"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.bb_cost_tolerance < 0:
            raise ValueError("bb_cost_tolerance must be non-negative")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be >= 1")

    def samples_for(self, N: int) -> int:
        return int(self.n) if self.n is not None else samples_per_set(N, self.n_rule_c)

    def basis_config(self) -> BasisConfig:
        dim = {"synthetic-map": 1, "gmm-modelsel": 2, "dirichlet": self.d - 1}[self.kind]
        return BasisConfig.isotropic(dim, self.smoothness)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return config_digest(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kind = d.get("kind", "synthetic-map")
        merged = default_config(kind).to_dict()
        merged.update(d)
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON config ({exc.msg})") from None
        return cls.from_dict(data)


def default_config(kind: str) -> ExperimentConfig:
    """Desk-scale defaults for each experiment family."""
    if kind == "synthetic-map":
        return ExperimentConfig(
            kind=kind, N=[1000, 10000], n=None, test_size=2000, methods=["bb", "kk"],
            smoothness=1.0, C_grid=[1.0, 1.5], sigma_grid=[0.5, 1.0, 2.0],
            ridge_grid=[0.0, 1e-4, 1e-2], D_grid=["auto", 128, 256, 512],
            kk_C_grid=[1.0, 1.5], kk_sigma_grid=[0.025, 0.05, 0.1, 0.2, 0.4],
            bb_cost_tolerance=0.01, repetitions=7)
    if kind == "gmm-modelsel":
        return ExperimentConfig(
            kind=kind, N=[4000], n=200, test_size=500, methods=list(METHODS[kind]),
            smoothness=1.0, C_grid=[1.0, 2.0, 3.0], sigma_grid=[0.25, 0.5, 1.0],
            ridge_grid=[1e-4, 1e-2, 1.0], D_grid=["auto"],
            kk_C_grid=[1.0, 2.0, 3.0], kk_sigma_grid=[0.025, 0.05, 0.1, 0.2, 0.4])
    if kind == "dirichlet":
        return ExperimentConfig(
            kind=kind, N=[4000], n=10, test_size=500, methods=list(METHODS[kind]),
            smoothness=1.0, C_grid=[1.0, 2.0, 3.0], sigma_grid=[0.5, 1.0, 2.0],
            ridge_grid=[1e-4, 1e-2, 1.0], D_grid=[512, 1024],
            kk_C_grid=[1.0, 2.0, 3.0], kk_sigma_grid=[0.1, 0.2, 0.4, 0.8])
    raise ValueError(f"unknown experiment kind {kind!r}")


# ---------------------------------------------------------------------------
# timing


@dataclass
class Timing:
    per_query: float
    runs: list[float]
    n_queries: int


def time_queries(fn: Callable, queries: Sequence, warmup: int = 10, timed: int = 200,
                 runs: int = 3) -> Timing:
    """Mean per-query wall time of ``fn`` (median over ``runs``), on a monotonic clock.

    The first ``warmup`` queries are evaluated untimed; the next ``timed``
    queries are timed as a block in every run.
    """
    queries = list(queries)
    if len(queries) < MIN_TIMED_QUERIES:
        raise DataError(f"need at least {MIN_TIMED_QUERIES} test queries for timing, got {len(queries)}")
    for q in queries[:warmup]:
        fn(q)
    block = queries[:max(MIN_TIMED_QUERIES, min(timed, len(queries)))]
    per_run = []
    for _ in range(max(1, runs)):
        t0 = time.perf_counter()
        for q in block:
            fn(q)
        per_run.append((time.perf_counter() - t0) / len(block))
    return Timing(statistics.median(per_run), per_run, len(block))


def harness_overhead(queries: Sequence, runs: int = 3) -> float:
    """Per-query time of a no-op predictor under :func:`time_queries`."""
    return time_queries(lambda q: None, queries, warmup=0, timed=len(queries), runs=runs).per_query


# ---------------------------------------------------------------------------
# report rows


@dataclass
class BenchRow:
    experiment: str
    method: str
    N: int
    n: int
    seed: int
    mse: float
    eval_time_s: float
    train_time_s: float
    config_digest: str
    params: dict = field(default_factory=dict)

    def as_csv(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "experiment": self.experiment,
                "method": self.method, "N": self.N, "n": self.n, "seed": self.seed,
                "mse": repr(float(self.mse)), "eval_time_s": f"{self.eval_time_s:.9g}",
                "train_time_s": f"{self.train_time_s:.9g}", "config_digest": self.config_digest,
                "params": json.dumps(self.params, sort_keys=True, default=_jsonable)}


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


@dataclass
class BenchReport:
    config: ExperimentConfig
    rows: list[BenchRow]

    def find(self, method: str, N: int | None = None) -> list[BenchRow]:
        return [r for r in self.rows if r.method == method and (N is None or r.N == N)]


def write_report_csv(rows: Sequence[BenchRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r.as_csv())


def read_report_csv(path) -> list[BenchRow]:
    """Read and schema-check a report; raises :class:`DataError` if malformed."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise DataError(f"{path}: report columns {reader.fieldnames} do not match the schema")
        for lineno, rec in enumerate(reader, start=2):
            try:
                if int(rec["schema_version"]) != REPORT_SCHEMA_VERSION:
                    raise DataError(f"{path}: line {lineno} has schema version {rec['schema_version']}")
                row = BenchRow(rec["experiment"], rec["method"], int(rec["N"]), int(rec["n"]),
                               int(rec["seed"]), float(rec["mse"]), float(rec["eval_time_s"]),
                               float(rec["train_time_s"]), rec["config_digest"],
                               json.loads(rec["params"]))
            except (TypeError, ValueError, KeyError) as exc:
                raise DataError(f"{path}: line {lineno} is malformed ({exc})") from None
            if row.experiment not in KINDS or not row.method:
                raise DataError(f"{path}: line {lineno} has an unknown experiment or method")
            if not (row.mse >= 0 or math.isnan(row.mse)) or not row.eval_time_s > 0 \
                    or not row.train_time_s >= 0:
                raise DataError(f"{path}: line {lineno} has out-of-range metrics")
            rows.append(row)
    return rows


def format_table(rows: Sequence[BenchRow]) -> str:
    """Human-readable summary: median over seeds per (method, N)."""
    groups: dict[tuple, list[BenchRow]] = {}
    for r in rows:
        groups.setdefault((r.experiment, r.N, r.method), []).append(r)
    head = f"{'experiment':<14} {'method':<6} {'N':>7} {'n':>5} {'seeds':>5} " \
           f"{'MSE':>12} {'eval/query':>12} {'train':>10}"
    lines = [head, "-" * len(head)]
    for (exp, N, method), grp in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        m = statistics.median(r.mse for r in grp)
        e = statistics.median(r.eval_time_s for r in grp)
        t = statistics.median(r.train_time_s for r in grp)
        lines.append(f"{exp:<14} {method:<6} {N:>7} {grp[0].n:>5} {len(grp):>5} "
                     f"{m:>12.6g} {_fmt_time(e):>12} {_fmt_time(t):>10}")
    return "\n".join(lines)


def _fmt_time(s: float) -> str:
    if s == 0:
        return "-"
    if s < 1e-3:
        return f"{s * 1e6:.1f}us"
    if s < 1:
        return f"{s * 1e3:.2f}ms"
    return f"{s:.2f}s"


# ---------------------------------------------------------------------------
# pipeline


def split_train_validation(N: int, val_fraction: float, seed: int):
    perm = np.random.default_rng(np.random.SeedSequence([seed, 99])).permutation(N)
    n_val = max(1, int(round(val_fraction * N)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _unit(ds: Dataset) -> list[np.ndarray]:
    return [ds.transform.to_unit(s) for s in ds.sets]


def train_bb(train: Dataset, cfg: ExperimentConfig, seed: int, grid_overrides: dict | None = None
             ) -> tuple[DoubleBasisModel, dict]:
    """Grid-search on a validation split of ``train``, then refit on all of it."""
    g = {"C_grid": cfg.C_grid, "sigma_grid": cfg.sigma_grid, "ridge_grid": cfg.ridge_grid,
         "D_grid": cfg.D_grid}
    g.update(grid_overrides or {})
    basis = cfg.basis_config()
    fit_i, val_i = split_train_validation(len(train), cfg.val_fraction, seed)
    fit, val = train.subset(fit_i), train.subset(val_i)
    sel = select_bb_hyperparameters(fit.sets, fit.responses, val.sets, val.responses, basis,
                                    g["C_grid"], g["sigma_grid"], g["ridge_grid"], g["D_grid"],
                                    seed=seed, transform=train.transform, feature_c=cfg.feature_c,
                                    cost_tolerance=cfg.bb_cost_tolerance)
    best = sel.best
    idx = enumerate_index_set(basis, best["t"])
    A = coefficient_matrix(_unit(train), idx)
    model = fit_double_basis_coefficients(
        A, train.responses, idx, best["D"], best["sigma"], best["ridge"], seed=seed,
        transform=train.transform,
        meta={"n": int(train.meta.get("n") or len(train.sets[0])), "t": best["t"],
              "hyperparameters": best, "validation_mse": sel.best_score,
              "grid": {k: list(v) for k, v in g.items()}})
    return model, dict(best, val_mse=sel.best_score)


def train_kk(train: Dataset, cfg: ExperimentConfig, seed: int, grid_overrides: dict | None = None
             ) -> tuple[KernelKernelModel, dict]:
    g = {"kk_C_grid": cfg.kk_C_grid, "kk_sigma_grid": cfg.kk_sigma_grid}
    g.update(grid_overrides or {})
    basis = cfg.basis_config()
    fit_i, val_i = split_train_validation(len(train), cfg.val_fraction, seed)
    fit, val = train.subset(fit_i), train.subset(val_i)
    sel = select_kk_hyperparameters(fit.sets, fit.responses, val.sets, val.responses, basis,
                                    g["kk_C_grid"], g["kk_sigma_grid"], cfg.kernel, train.transform)
    best = sel.best
    idx = enumerate_index_set(basis, best["t"])
    A = coefficient_matrix(_unit(train), idx)
    model = KernelKernelModel(idx, A, train.responses, best["sigma_kk"], cfg.kernel,
                              train.transform, meta={"N": len(train), "t": best["t"],
                                                     "hyperparameters": best,
                                                     "validation_mse": sel.best_score})
    return model, dict(best, val_mse=sel.best_score)


def _baseline_predictor(method: str, cfg: ExperimentConfig, seed: int, train: Dataset):
    if method in ("aic", "bic", "cv"):
        def predict(pts):
            return float(baselines.select_k(pts, range(1, 11), method, seed=seed,
                                            holdout=cfg.cv_holdout, restarts=cfg.em_restarts,
                                            max_iter=cfg.em_max_iter, tol=cfg.em_tol).k)
        return predict
    if method == "mle":
        def predict(pts):
            fit = baselines.dirichlet_mle(complete_simplex(pts), cfg.mle_max_iter, cfg.mle_tol)
            predict.unconverged += not fit.converged
            return fit.alpha
        predict.unconverged = 0
        return predict
    if method == "mean":
        centre = train.responses.mean(axis=0)
        return lambda pts: centre
    raise ValueError(f"unknown baseline {method!r}")


def run_one(cfg: ExperimentConfig, N: int, seed: int, digest: str | None = None,
            datasets: tuple[Dataset, Dataset] | None = None) -> list[BenchRow]:
    """All configured methods for one (N, seed) cell."""
    digest = digest or cfg.digest()
    n = cfg.samples_for(N)
    if datasets is None:
        train = make_dataset(cfg.kind, N, n, seed, stream=0, d=cfg.d, noise_std=cfg.noise_std)
        test = make_dataset(cfg.kind, cfg.test_size, n, seed, stream=1, d=cfg.d)
    else:
        train, test = datasets
    if len(test) < MIN_TIMED_QUERIES:
        raise DataError(f"test set has {len(test)} sets; at least {MIN_TIMED_QUERIES} are required")
    rows = []
    for method in cfg.methods:
        log.info("%s N=%d n=%d seed=%d method=%s", cfg.kind, N, n, seed, method)
        if method in ("bb", "kk"):
            t0 = time.perf_counter()
            model, params = (train_bb if method == "bb" else train_kk)(train, cfg, seed)
            train_time = time.perf_counter() - t0
            pred = model.predict_many(test.sets)
            timing = time_queries(model.predict, test.sets, cfg.warmup, cfg.timed_queries,
                                  cfg.repetitions)
            eval_time = timing.per_query
        else:
            t0 = time.perf_counter()
            fn = _baseline_predictor(method, cfg, seed, train)
            train_time = time.perf_counter() - t0 if method == "mean" else 0.0
            if method == "mean":
                pred = np.array([fn(s) for s in test.sets])
                eval_time = time_queries(fn, test.sets, cfg.warmup, cfg.timed_queries,
                                         cfg.repetitions).per_query
            else:
                # expensive per-query fits: the accuracy pass doubles as the timed pass
                for s in test.sets[:min(cfg.warmup, 2)]:
                    fn(s)
                t0 = time.perf_counter()
                pred = np.array([fn(s) for s in test.sets])
                eval_time = (time.perf_counter() - t0) / len(test.sets)
            params = {}
            if method == "mle":
                # counts cover the warmup calls plus the accuracy pass
                params.update(alpha_cap=baselines.ALPHA_MAX, unconverged=int(fn.unconverged),
                              fits=min(cfg.warmup, 2) + len(test.sets))
        rows.append(BenchRow(cfg.kind, method, N, n, seed, mse(pred, test.responses),
                             eval_time, train_time, digest, params))
    return rows


def run_experiment(cfg: ExperimentConfig) -> BenchReport:
    digest = cfg.digest()
    rows: list[BenchRow] = []
    for N in cfg.N:
        for seed in cfg.seeds:
            rows.extend(run_one(cfg, N, seed, digest))
    return BenchReport(cfg, rows)


def write_outputs(report: BenchReport, out_dir, plots: bool = True) -> dict:
    """Write ``report.csv``, ``report.txt``, ``config.json`` and figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv", "table": out / "report.txt", "config": out / "config.json"}
    write_report_csv(report.rows, paths["csv"])
    paths["table"].write_text(format_table(report.rows) + "\n")
    paths["config"].write_text(json.dumps(report.config.to_dict(), indent=2) + "\n")
    if plots:
        from doublebasis.plotting import plot_report
        paths["figures"] = plot_report(report.rows, out)
    return paths
