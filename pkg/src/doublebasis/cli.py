"""``doublebasis`` command line: synth, train, predict, bench and plot.

Exit status is 0 on success, 2 for usage errors (bad flags, invalid ranges,
unwritable paths), 3 for malformed input data and 4 for numerical failures.

Configuration files are JSON objects whose keys are the fields of
:class:`doublebasis.bench.ExperimentConfig`; flags override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from doublebasis.bench import (
    METHODS,
    ExperimentConfig,
    default_config,
    format_table,
    read_report_csv,
    run_experiment,
    train_bb,
    train_kk,
    write_outputs,
)
from doublebasis.errors import DataError, NumericError, ResourceError
from doublebasis.io import (
    config_digest,
    load_model,
    read_dataset,
    read_sample_sets,
    save_model,
    write_dataset,
)
from doublebasis.regress import DoubleBasisModel
from doublebasis.synth import KINDS, make_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("doublebasis")


class UsageError(ValueError):
    pass


def format_prediction(value) -> str:
    """Fixed twelve-decimal formatting; multi-output rows are space separated."""
    v = np.atleast_1d(np.asarray(value, dtype=float)) + 0.0
    return " ".join(f"{x:.12f}" for x in v)


def _float_list(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _int_list(s: str) -> list[int]:
    try:
        return [int(float(v)) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _d_list(s: str) -> list:
    out = []
    for v in s.split(","):
        v = v.strip()
        if v:
            out.append("auto" if v == "auto" else _int_list(v)[0])
    return out


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameter grids (comma-separated)")
    g.add_argument("--grid-C", type=_float_list, dest="C_grid", help="truncation constants")
    g.add_argument("--grid-sigma", type=_float_list, dest="sigma_grid", help="RKS bandwidths")
    g.add_argument("--grid-ridge", type=_float_list, dest="ridge_grid", help="ridge penalties")
    g.add_argument("--grid-D", type=_d_list, dest="D_grid", help="feature counts or 'auto'")
    g.add_argument("--grid-C-kk", type=_float_list, dest="kk_C_grid",
                   help="truncation constants for the Kernel-Kernel model")
    g.add_argument("--grid-sigma-kk", type=_float_list, dest="kk_sigma_grid",
                   help="smoother bandwidths for the Kernel-Kernel model")
    p.add_argument("--kernel", choices=("rbf", "bounded"), help="Kernel-Kernel smoothing kernel")
    p.add_argument("--smoothness", type=float, help="Sobolev smoothness gamma")


_OVERRIDES = ("C_grid", "sigma_grid", "ridge_grid", "D_grid", "kk_C_grid", "kk_sigma_grid",
              "kernel", "smoothness")


def _config_from_args(args, kind: str | None) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(base, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
    if kind is not None:
        if base.get("kind", kind) != kind:
            raise UsageError(f"config kind {base['kind']!r} disagrees with the data kind {kind!r}")
        base["kind"] = kind
    for key in _OVERRIDES:
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    for flag, key in (("N", "N"), ("n", "n"), ("method", "methods"), ("seed", "seeds"),
                      ("kind", "kind"), ("test_size", "test_size"),
                      ("repetitions", "repetitions")):
        v = getattr(args, flag, None)
        if flag == "method" and isinstance(v, str):
            v = [v]
        if v is not None and not (flag == "kind" and kind is not None):
            base[key] = v
    try:
        return ExperimentConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _writable(path: Path) -> Path:
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"output directory {parent} does not exist")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    if args.N < 1:
        raise UsageError("--N must be >= 1")
    if args.n is not None and args.n < 1:
        raise UsageError("--n must be >= 1")
    cfg = _config_from_args(argparse.Namespace(config=args.config, kind=args.kind), None)
    kind = cfg.kind
    n = args.n if args.n is not None else cfg.samples_for(args.N)
    out = _writable(Path(args.out))
    ds = make_dataset(kind, args.N, n, args.seed, stream=args.stream, d=cfg.d,
                      noise_std=cfg.noise_std)
    write_dataset(ds, out)
    manifest = {"kind": kind, "N": args.N, "n": n, "seed": args.seed, "stream": args.stream,
                "d": cfg.d, "noise_std": cfg.noise_std, "dataset": out.name}
    manifest["config_digest"] = config_digest(manifest)
    Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(ds)} sets of {n} points to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        ds = read_dataset(args.dataset)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {args.dataset}: {exc.strerror}") from None
    method = args.method
    if args.method not in ("bb", "kk"):
        raise UsageError("--method must be bb or kk")
    cfg = _config_from_args(args, ds.kind)
    seed = args.seed if args.seed is not None else 0
    out = _writable(Path(args.out))
    if len(ds) < 2:
        raise DataError(f"{args.dataset}: need at least two training sets")
    model, params = (train_bb if method == "bb" else train_kk)(ds, cfg, seed)
    model.meta.update(method=method, dataset=str(args.dataset), seed=seed,
                      dataset_seed=ds.meta.get("seed"), hyperparameters=params)
    digest = config_digest({"config": cfg.to_dict(), "seed": seed, "method": method,
                            "dataset_meta": ds.meta})
    save_model(model, out, digest)
    print(f"trained {method} on N={len(ds)}: " + json.dumps(params, sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model = load_model(args.model)
        sets = read_sample_sets(args.samples)
    except OSError as exc:
        raise UsageError(f"cannot read input: {exc.strerror} ({exc.filename})") from None
    dim = model.index_set.config.dim
    for k, s in enumerate(sets, start=1):
        if s.shape[1] != dim:
            raise DataError(f"sample set {k} has dimension {s.shape[1]}; the model expects l={dim}")
    lines = []
    for s in sets:
        if isinstance(model, DoubleBasisModel):
            y = model.predict(s, truncate_output=not args.no_truncate)
        else:
            y = model.predict(s)
        lines.append(format_prediction(y))
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config_from_args(args, None)
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} exists and is not a directory")
    report = run_experiment(cfg)
    paths = write_outputs(report, out, plots=not args.no_plots)
    print(format_table(report.rows))
    print(f"report: {paths['csv']}")
    for fig in paths.get("figures", []):
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_plot(args) -> int:
    rows = read_report_csv(args.report)
    from doublebasis.plotting import plot_report

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fig in plot_report(rows, out):
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(json.dumps(default_config(args.kind).to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doublebasis", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a dataset file")
    s.add_argument("--kind", choices=KINDS, default=None)
    s.add_argument("--N", type=int, required=True, help="number of sample sets")
    s.add_argument("--n", type=int, help="points per set (default: the N^(3/5) rule)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream", type=int, default=0, help="independent stream under one seed")
    s.add_argument("--config", help="JSON experiment config")
    s.add_argument("--out", required=True, help="output .jsonl path")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a model on a dataset file")
    t.add_argument("dataset")
    t.add_argument("--method", choices=("bb", "kk"), default="bb")
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="JSON experiment config supplying grids")
    t.add_argument("--out", required=True, help="output model path")
    _add_grid_flags(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="predict responses for sample sets")
    r.add_argument("model")
    r.add_argument("samples", help=".jsonl instance records or blank-line separated rows")
    r.add_argument("--no-truncate", action="store_true", help="raw Double-Basis predictions")
    r.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="run an experiment and write a report")
    b.add_argument("--config", help="JSON experiment config")
    b.add_argument("--kind", choices=KINDS)
    b.add_argument("--N", type=_int_list, help="training-set sizes")
    b.add_argument("--n", type=int, help="points per set")
    b.add_argument("--seed", type=_int_list, help="seeds")
    b.add_argument("--method", type=lambda s: [m for m in s.split(",") if m],
                   help="methods, from: " + "; ".join(f"{k}: {','.join(v)}" for k, v in METHODS.items()))
    b.add_argument("--test-size", type=int, dest="test_size")
    b.add_argument("--repetitions", type=int, help="timing runs (median is reported)")
    b.add_argument("--out", default="bench-out", help="output directory")
    b.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    _add_grid_flags(b)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("plot", help="render figures from a report CSV")
    g.add_argument("report")
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_plot)

    d = sub.add_parser("defaults", help="print the default config for an experiment")
    d.add_argument("kind", choices=KINDS)
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ResourceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
