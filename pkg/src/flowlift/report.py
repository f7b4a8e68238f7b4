"""Delimited result files and the figures rendered next to them.

Every report writes a CSV with a documented, stable header and an SVG
figure of the same data in the same directory. CSV cell formatting uses
repr-roundtrip precision so re-reading a report reproduces the numbers
bit-exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

STRATEGY_COLORS = {
    "mean": "tab:gray",
    "jpma-joint": "tab:orange",
    "jpma-pose": "tab:red",
    "rpea-joint": "tab:blue",
    "rpea-pose": "tab:green",
}


def write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    """Write rows under a fixed column order; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float)
                             else row[c] for c in columns])


def read_csv(path: str | Path) -> list[dict]:
    """Read a report CSV back; numeric cells become int/float."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key, val in row.items():
            for cast in (int, float):
                try:
                    row[key] = cast(val)
                    break
                except ValueError:
                    pass
    return rows


def _save_figure(fig, path: Path) -> None:
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def training_report(history: list[dict], out_dir: str | Path,
                    stem: str = "training") -> tuple[Path, Path]:
    """Loss-curve CSV + SVG: columns epoch, mean_loss, lr."""
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    write_csv(csv_path, history, ["epoch", "mean_loss", "lr"])

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r["epoch"] for r in history],
            [r["mean_loss"] for r in history], marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean CFM loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    _save_figure(fig, svg_path)
    return csv_path, svg_path


def strategy_report(rows: list[dict], out_dir: str | Path,
                    stem: str = "strategies") -> tuple[Path, Path]:
    """Aggregation comparison CSV + SVG.

    Rows are {strategy, n, mpjpe, p_mpjpe}; the figure shows MPJPE and
    P-MPJPE against the hypothesis count, one line per strategy.
    """
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    write_csv(csv_path, rows, ["strategy", "n", "mpjpe", "p_mpjpe"])

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    strategies = sorted({r["strategy"] for r in rows})
    for ax, metric, label in zip(axes, ("mpjpe", "p_mpjpe"),
                                 ("MPJPE (mm)", "P-MPJPE (mm)")):
        for strategy in strategies:
            pts = sorted((r["n"], r[metric]) for r in rows
                         if r["strategy"] == strategy)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    ms=4, label=strategy,
                    color=STRATEGY_COLORS.get(strategy))
        ax.set_xlabel("hypotheses N")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    _save_figure(fig, svg_path)
    return csv_path, svg_path


def bench_report(rows: list[dict], out_dir: str | Path,
                 stem: str = "bench") -> tuple[Path, Path]:
    """Timing grid CSV + SVG: columns steps, n, ms_per_pose (3-run median
    of per-pose wall time); the figure plots time against integration
    steps, one line per hypothesis count."""
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    write_csv(csv_path, rows, ["steps", "n", "ms_per_pose"])

    fig, ax = plt.subplots(figsize=(6, 4))
    for n in sorted({r["n"] for r in rows}):
        pts = sorted((r["steps"], r["ms_per_pose"]) for r in rows
                     if r["n"] == n)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                ms=4, label=f"N={n}")
    ax.set_xlabel("integration steps S")
    ax.set_ylabel("ms per pose")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save_figure(fig, svg_path)
    return csv_path, svg_path


def uncertainty_report(stds, errors, out_dir: str | Path,
                       stem: str = "uncertainty") -> tuple[Path, Path]:
    """Per-joint spread-vs-error scatter CSV + SVG: columns std_mm,
    error_mm, one row per (sample, joint)."""
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    rows = [{"std_mm": float(s), "error_mm": float(e)}
            for s, e in zip(stds, errors)]
    write_csv(csv_path, rows, ["std_mm", "error_mm"])

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(stds, errors, s=4, alpha=0.25, edgecolors="none")
    ax.set_xlabel("hypothesis std (mm)")
    ax.set_ylabel("prediction error (mm)")
    ax.grid(True, alpha=0.3)
    _save_figure(fig, svg_path)
    return csv_path, svg_path
