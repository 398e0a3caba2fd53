"""Figure data tables and static vector renderings from sweep results.

The CSV table is the primary artifact; the SVG next to it is a minimal
static rendering. Three kinds are supported:

  * accuracy_vs_width: best test accuracy per width (mean over repeats).
  * accuracy_heatmap_2d: best test accuracy over the (overall
    connectivity, last-layer connectivity) grid; missing cells are the
    invalid combinations, the color scale is centered at the baseline
    model's accuracy, and the argmax cells are flagged.
  * distance_vs_width: empirical and predicted kernel distances.
"""

from __future__ import annotations

import csv
import glob
import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import TwoSlopeNorm  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("accuracy_vs_width", "accuracy_heatmap_2d", "distance_vs_width")


class MissingResults(ValueError):
    pass


@dataclass
class FigureExport:
    kind: str
    table_path: str
    image_path: str
    rows: list[dict]


def _load_run_cells(results_dir: str) -> list[dict]:
    cells = []
    for path in sorted(glob.glob(os.path.join(results_dir, "run_*.json"))):
        if path.endswith(".error"):
            continue
        with open(path) as fh:
            payload = json.load(fh)
        cells.append(payload)
    if not cells:
        raise MissingResults(f"no run records in {results_dir}")
    return cells


def _write_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _mean_by(cells: list[dict], key_fn) -> dict:
    groups: dict = {}
    for payload in cells:
        acc = payload["record"].get("best_test_accuracy")
        if acc is None or payload["record"]["aborted"]:
            continue
        groups.setdefault(key_fn(payload), []).append(acc)
    return {k: float(np.mean(v)) for k, v in groups.items()}


def export_accuracy_vs_width(results_dir: str, out_base: str) -> FigureExport:
    cells = _load_run_cells(results_dir)
    means = _mean_by(cells, lambda c: c["cell"]["width"])
    counts: dict = {}
    for payload in cells:
        counts[payload["cell"]["width"]] = counts.get(payload["cell"]["width"], 0) + 1
    rows = [
        {"width": w, "best_test_accuracy": means[w], "repeats": counts[w]}
        for w in sorted(means)
    ]
    table_path = out_base + ".csv"
    image_path = out_base + ".svg"
    _write_csv(table_path, rows)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    widths = [r["width"] for r in rows]
    accs = [r["best_test_accuracy"] for r in rows]
    ax.plot(widths, accs, "o-")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("width")
    ax.set_ylabel("best test accuracy")
    fig.tight_layout()
    fig.savefig(image_path)
    plt.close(fig)
    return FigureExport("accuracy_vs_width", table_path, image_path, rows)


def export_accuracy_heatmap(results_dir: str, out_base: str) -> FigureExport:
    cells = _load_run_cells(results_dir)
    means = _mean_by(
        cells,
        lambda c: (c["cell"]["overall_connectivity"], c["cell"]["llc"]),
    )
    if not means:
        raise MissingResults("no completed cells to plot")
    conns = sorted({k[0] for k in means}, reverse=True)
    llcs = sorted({k[1] if k[1] is not None else 1.0 for k in means})
    grid = np.full((len(llcs), len(conns)), np.nan)
    rows = []
    for (conn, llc), acc in sorted(means.items(), reverse=True):
        llc_val = llc if llc is not None else 1.0
        grid[llcs.index(llc_val), conns.index(conn)] = acc
        rows.append(
            {"overall_connectivity": conn, "last_layer_connectivity": llc_val,
             "best_test_accuracy": acc}
        )
    best = np.nanmax(grid)
    for row in rows:
        row["is_best"] = int(row["best_test_accuracy"] == best)
    # baseline: the densest configuration (connectivity 1 when present)
    baseline_conn = max(conns)
    baseline_col = grid[:, conns.index(baseline_conn)]
    baseline = float(np.nanmax(baseline_col))

    table_path = out_base + ".csv"
    image_path = out_base + ".svg"
    _write_csv(table_path, rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    vmin = float(np.nanmin(grid))
    vmax = float(np.nanmax(grid))
    if not vmin < baseline < vmax:
        baseline = 0.5 * (vmin + vmax)  # degenerate single-cell grids
    norm = TwoSlopeNorm(vcenter=baseline, vmin=vmin, vmax=vmax)
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="RdBu_r", norm=norm)
    stars = np.argwhere(grid == best)
    ax.plot(stars[:, 1], stars[:, 0], "w*", markersize=12, markeredgecolor="k")
    ax.set_xticks(range(len(conns)), [f"{c:.3g}" for c in conns])
    ax.set_yticks(range(len(llcs)), [f"{l:.1f}" for l in llcs])
    ax.set_xlabel("overall connectivity")
    ax.set_ylabel("last-layer connectivity")
    fig.colorbar(im, ax=ax, label="best test accuracy")
    fig.tight_layout()
    fig.savefig(image_path)
    plt.close(fig)
    return FigureExport("accuracy_heatmap_2d", table_path, image_path, rows)


def export_distance_vs_width(results_dir: str, out_base: str) -> FigureExport:
    path = os.path.join(results_dir, "kernel_summary.csv")
    if not os.path.exists(path):
        raise MissingResults(f"no kernel_summary.csv in {results_dir}")
    with open(path, newline="") as fh:
        rows = [dict(r) for r in csv.DictReader(fh)]
    if not rows:
        raise MissingResults("kernel summary is empty")
    table_path = out_base + ".csv"
    image_path = out_base + ".svg"
    _write_csv(table_path, rows)

    widths = [int(r["width"]) for r in rows]
    emp = [float(r["distance_empirical"]) for r in rows]
    err = [float(r["distance_stderr"]) for r in rows]
    approx = [float(r["distance_approx"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(widths, emp, yerr=err, fmt="o-", label="measured")
    ax.plot(widths, approx, "--", color="grey", label="closed-form")
    mc = [float(r["distance_mask_mc"]) for r in rows if r.get("distance_mask_mc")]
    if len(mc) == len(rows):
        ax.plot(widths, mc, ":", color="k", label="mask Monte Carlo")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("width")
    ax.set_ylabel("mean squared kernel distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(image_path)
    plt.close(fig)
    return FigureExport("distance_vs_width", table_path, image_path, rows)


def export_figure(kind: str, results_dir: str, out_base: str) -> FigureExport:
    if kind == "accuracy_vs_width":
        return export_accuracy_vs_width(results_dir, out_base)
    if kind == "accuracy_heatmap_2d":
        return export_accuracy_heatmap(results_dir, out_base)
    if kind == "distance_vs_width":
        return export_distance_vs_width(results_dir, out_base)
    raise ValueError(f"unknown figure kind {kind!r}; pick one of {KINDS}")
