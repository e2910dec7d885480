"""Figures for benchmark reports.

matplotlib is imported only when a figure is drawn; the library and the
other subcommands never need it.
"""

from __future__ import annotations

import statistics
from pathlib import Path
from typing import Sequence


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _medians(rows, key):
    out: dict[str, dict[int, float]] = {}
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.method, r.N), []).append(key(r))
    for (method, N), vals in groups.items():
        out.setdefault(method, {})[N] = statistics.median(vals)
    return out


def plot_report(rows: Sequence, out_dir, fmt: str = "png") -> list[Path]:
    """One figure per experiment in ``rows``; returns the written paths.

    With several training-set sizes the figure shows test MSE and per-query
    time against N on log axes; with a single N it shows per-method bars.
    """
    plt = _pyplot()
    out_dir = Path(out_dir)
    written = []
    for experiment in sorted({r.experiment for r in rows}):
        sub = [r for r in rows if r.experiment == experiment]
        mse = _medians(sub, lambda r: r.mse)
        tq = _medians(sub, lambda r: r.eval_time_s)
        Ns = sorted({r.N for r in sub})
        fig, (ax_m, ax_t) = plt.subplots(1, 2, figsize=(10, 4))
        if len(Ns) > 1:
            for method in sorted(mse):
                xs = sorted(mse[method])
                ax_m.plot(xs, [mse[method][x] for x in xs], marker="o", label=method)
                ax_t.plot(xs, [tq[method][x] for x in xs], marker="o", label=method)
            for ax in (ax_m, ax_t):
                ax.set_xscale("log")
                ax.set_xlabel("training sets N")
                ax.legend()
            ax_t.set_yscale("log")
        else:
            methods = sorted(mse)
            N = Ns[0]
            ax_m.bar(methods, [mse[m][N] for m in methods])
            ax_t.bar(methods, [tq[m][N] for m in methods])
            ax_t.set_yscale("log")
            for ax in (ax_m, ax_t):
                ax.set_xlabel(f"method (N={N})")
        ax_m.set_ylabel("test MSE")
        ax_t.set_ylabel("seconds per query")
        fig.suptitle(experiment)
        fig.tight_layout()
        path = out_dir / f"{experiment}.{fmt}"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
