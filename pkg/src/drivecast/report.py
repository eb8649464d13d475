"""Sweep-report rendering: ranked summary tables and SVG profile plots."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import MissingInput

_PROFILE_LINES = [
    ("actual_mps", "actual", "#202020", "-"),
    ("predicted_mps", "predicted", "#d62728", "-"),
    ("tmc_direct_mps", "tmc direct", "#1f77b4", "--"),
    ("average_speed_mps", "average speed", "#2ca02c", "--"),
    ("posted_speed_mps", "posted speed", "#9467bd", ":"),
]


def read_rows(path: Path) -> list[dict]:
    if not path.is_file():
        raise MissingInput(f"report file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def format_summary_table(summary_rows: list[dict], limit: int = 20) -> str:
    """Fixed-width ranked table of configurations and baselines."""
    header = f"{'rank':>4}  {'config_id':<28} {'n':>2} {'k':>2} {'m':>2} {'r':>2}  {'arch':<14} {'mean rmse':>10}  status"
    lines = [header, "-" * len(header)]
    for row in summary_rows[:limit]:
        mean = row["mean_rmse_mps"]
        mean_text = f"{float(mean):.4f}" if mean not in ("", None) else "-"
        lines.append(
            f"{row['rank']:>4}  {row['config_id']:<28} {row['n']:>2} {row['k']:>2} "
            f"{row['m']:>2} {row['r']:>2}  {row['arch']:<14} {mean_text:>10}  {row['status']}"
        )
    if len(summary_rows) > limit:
        lines.append(f"... {len(summary_rows) - limit} more rows in summary.csv")
    return "\n".join(lines)


def render_trip_profile(trip_id: str, rows: list[dict], out_path: Path) -> None:
    """One predicted-vs-actual line chart (plus baselines) for a trip."""
    rows = sorted(rows, key=lambda r: int(r["sp_index"]))
    arcs = [float(r["arc_m"]) for r in rows]
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    for column, label, color, style in _PROFILE_LINES:
        ax.plot(arcs, [float(r[column]) for r in rows], style, color=color,
                label=label, linewidth=1.4)
    ax.set_xlabel("arc position [m]")
    ax.set_ylabel("speed [m/s]")
    ax.set_title(f"speed profile, {trip_id} (config {rows[0]['config_id']})")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def render_summary_chart(summary_rows: list[dict], out_path: Path, limit: int = 25) -> None:
    """Horizontal bar chart of mean RMSE per configuration."""
    rows = [r for r in summary_rows if r["mean_rmse_mps"] not in ("", None)][:limit]
    labels = [r["config_id"] for r in rows][::-1]
    values = [float(r["mean_rmse_mps"]) for r in rows][::-1]
    colors = ["#1f77b4" if lab.startswith("cfg") else "#7f7f7f" for lab in labels]
    fig, ax = plt.subplots(figsize=(8.0, max(2.5, 0.35 * len(rows) + 1.2)))
    ax.barh(labels, values, color=colors)
    ax.set_xlabel("mean RMSE [m/s]")
    ax.set_title("sweep results (lower is better)")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def render_report(in_dir: str, with_plots: bool) -> dict:
    """Read a sweep output directory; optionally render plots into it.

    Returns a machine summary: ranked rows, best config, plot paths.
    """
    root = Path(in_dir)
    summary_rows = read_rows(root / "summary.csv")
    result: dict = {
        "in_dir": str(root),
        "n_rows": len(summary_rows),
        "best": next((r for r in summary_rows if r["config_id"].startswith("cfg")), None),
        "summary": summary_rows,
        "plots": [],
    }
    if with_plots:
        profile_rows = read_rows(root / "profiles.csv")
        plots_dir = root / "plots"
        plots_dir.mkdir(exist_ok=True)
        by_trip: dict[str, list[dict]] = {}
        for row in profile_rows:
            by_trip.setdefault(row["trip_id"], []).append(row)
        for trip_id in sorted(by_trip):
            out_path = plots_dir / f"{trip_id}.svg"
            render_trip_profile(trip_id, by_trip[trip_id], out_path)
            result["plots"].append(str(out_path))
        chart_path = plots_dir / "rmse_by_config.svg"
        render_summary_chart(summary_rows, chart_path)
        result["plots"].append(str(chart_path))
    return result
