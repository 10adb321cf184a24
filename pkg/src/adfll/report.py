"""Report rendering: delimited tables plus matplotlib figures.

The CSVs are the contract (stable schema, deterministic bytes); the figures
are rendered alongside them for quick inspection of the same data.
"""

from __future__ import annotations

import os

from .bench import ComparisonReport, build_report, parse_metrics_csv

TABLE_CSV = "table_fig5.csv"
ROUNDS_CSV = "rounds_fig10_11.csv"
PAIRWISE_CSV = "pairwise.csv"
TASK_FIGURE = "per_task_error.png"
ROUNDS_FIGURE = "rounds_error.png"


def write_report_csvs(
    report: ComparisonReport, out_dir, table_path=None
) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "table": table_path or os.path.join(out_dir, TABLE_CSV),
        "rounds": os.path.join(out_dir, ROUNDS_CSV),
        "pairwise": os.path.join(out_dir, PAIRWISE_CSV),
    }
    with open(paths["table"], "w", encoding="utf-8") as f:
        f.write(report.table_csv_text())
    with open(paths["rounds"], "w", encoding="utf-8") as f:
        f.write(report.rounds_csv_text())
    with open(paths["pairwise"], "w", encoding="utf-8") as f:
        f.write(report.pairwise_csv_text())
    return paths


def render_figures(report: ComparisonReport, out_dir) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(report.task_ids)), 4.0))
    n_agents = len(report.agent_ids)
    width = 0.8 / max(1, n_agents)
    for i, agent in enumerate(report.agent_ids):
        xs = [j + (i - (n_agents - 1) / 2) * width for j in range(len(report.task_ids))]
        ys = [report.errors[agent][t] for t in report.task_ids]
        ax.bar(xs, ys, width=width, label=agent)
    ax.set_xticks(range(len(report.task_ids)))
    ax.set_xticklabels(report.task_ids, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("distance error (voxels)")
    ax.set_title("Per-task terminal distance error")
    ax.legend(fontsize=7, ncol=min(4, n_agents))
    fig.tight_layout()
    path = os.path.join(out_dir, TASK_FIGURE)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if report.round_rows:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        rounds = [r for r, _, _ in report.round_rows]
        means = [m for _, _, m in report.round_rows]
        counts = [n for _, n, _ in report.round_rows]
        ax.plot(rounds, means, marker="o")
        for r, n, m in report.round_rows:
            ax.annotate(f"{n} agents", (r, m), textcoords="offset points",
                        xytext=(4, 4), fontsize=7)
        ax.set_xlabel("round")
        ax.set_ylabel("mean distance error (voxels)")
        ax.set_title("Mean error across active agents per round")
        ax.set_xticks(rounds)
        fig.tight_layout()
        path = os.path.join(out_dir, ROUNDS_FIGURE)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def report_from_run_dir(run_dir) -> ComparisonReport:
    with open(os.path.join(run_dir, "metrics.csv"), "r", encoding="utf-8") as f:
        return build_report(parse_metrics_csv(f.read()))


def generate_report(run_dir, out_dir=None, table_path=None) -> dict[str, str]:
    """CLI entry: read a run directory, write the CSVs and figures."""
    out_dir = out_dir or run_dir
    report = report_from_run_dir(run_dir)
    paths = write_report_csvs(report, out_dir, table_path)
    for p in render_figures(report, out_dir):
        paths[os.path.basename(p)] = p
    return paths
