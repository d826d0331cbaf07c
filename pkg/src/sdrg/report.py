"""CSV tables and summary figures for replication studies."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence


def fmt(v) -> str:
    """Stable text form: integers bare, floats by repr, NaN as ``nan``."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_rows(rows: Iterable[dict], fields: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([fmt(row[k]) for k in fields])
    return path


def read_rows(path: str | Path) -> list[dict]:
    """Rows back from :func:`write_rows`, with numeric fields converted."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: _parse(v) for k, v in row.items()})
    return out


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def render_text(summary: list[dict], fields: Sequence[str]) -> str:
    """Fixed-width table for the terminal."""
    cells = [[str(f) for f in fields]]
    for row in summary:
        cells.append([_short(row[f]) for f in fields])
    widths = [max(len(r[i]) for r in cells) for i in range(len(fields))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _short(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4g}"
    return str(v)


PANELS = (
    ("rel_mse_q1", "relative MSE of $\\hat Q_1$"),
    ("rel_abs_bias", "relative |bias| of $\\hat Q_0$"),
    ("coverage", "coverage of 95% CI"),
)


def plot_summary(summary: list[dict], out_dir: str | Path, stem: str = "summary") -> list[Path]:
    """One grouped bar chart per metric (scenarios on the x axis, one bar per estimator)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenarios = list(dict.fromkeys(r["scenario"] for r in summary))
    estimators = list(dict.fromkeys(r["estimator"] for r in summary))
    lookup = {(r["scenario"], r["estimator"]): r for r in summary}
    x = np.arange(len(scenarios))
    width = 0.8 / max(1, len(estimators))
    paths = []
    for key, label in PANELS:
        fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(scenarios), 3.2))
        for j, est in enumerate(estimators):
            vals = [lookup.get((sc, est), {}).get(key, float("nan")) for sc in scenarios]
            ax.bar(x + (j - (len(estimators) - 1) / 2) * width, vals, width, label=est)
        if key == "coverage":
            ax.axhline(0.95, color="k", lw=0.8, ls="--")
            ax.set_ylim(0, 1)
        ax.set_xticks(x)
        ax.set_xticklabels(scenarios)
        ax.set_ylabel(label)
        ax.legend(fontsize=7, frameon=False, loc="best")
        fig.tight_layout()
        # fixed metadata keeps the files byte-stable across runs
        path = out_dir / f"{stem}_{key}.png"
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
