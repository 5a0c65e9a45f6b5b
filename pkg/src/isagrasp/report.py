"""Report rendering: delimited tables plus matplotlib figures on disk.

The `report` CLI path writes, next to each CSV, a PNG rendering of the same
numbers: success-rate bars per method sliced by the mass/friction grid, and
refinement-rate comparisons across pipeline stages.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .pipeline import EvalReport

METHOD_ORDER = ("policy", "random", "heuristic")


def write_eval_report(report: EvalReport, out_dir) -> dict:
    """Emit eval_summary.csv, eval_cases.csv, and success_rates.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary_path = out / "eval_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "success_rate", "instances", "grid_pairs"])
        for method in METHOD_ORDER:
            if method in report.rows:
                writer.writerow([method, f"{report.rows[method]:.4f}",
                                 report.num_instances, len(report.grid)])

    cases_path = out / "eval_cases.csv"
    with open(cases_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "instance", "mass", "friction", "success", "reason"])
        for method in METHOD_ORDER:
            for case in report.cases.get(method, []):
                writer.writerow([method, case["instance"], case["mass"],
                                 case["friction"], int(case["success"]),
                                 case["reason"] or ""])

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    methods = [m for m in METHOD_ORDER if m in report.rows]
    rates = [report.rows[m] for m in methods]
    ax1.bar(methods, rates, color=["#2a6fdb", "#999999", "#cc8844"][:len(methods)])
    ax1.set_ylim(0, 1)
    ax1.set_ylabel("success rate")
    ax1.set_title(f"held-out success over {report.num_instances} instances "
                  f"x {len(report.grid)} physics pairs")
    for i, r in enumerate(rates):
        ax1.text(i, r + 0.02, f"{r:.2f}", ha="center")

    # per-grid-pair breakdown
    labels = [f"m={m}\nmu={mu}" for m, mu in report.grid]
    width = 0.8 / max(len(methods), 1)
    for j, method in enumerate(methods):
        per_pair = []
        for gi, (mass, mu) in enumerate(report.grid):
            hits = [c["success"] for c in report.cases[method]
                    if c["mass"] == mass and c["friction"] == mu]
            per_pair.append(sum(hits) / len(hits) if hits else 0.0)
        xs = [gi + j * width for gi in range(len(report.grid))]
        ax2.bar(xs, per_pair, width=width, label=method)
    ax2.set_xticks([gi + width for gi in range(len(report.grid))])
    ax2.set_xticklabels(labels, fontsize=7)
    ax2.set_ylim(0, 1)
    ax2.set_title("success by physics draw")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig_path = out / "success_rates.png"
    fig.savefig(fig_path, dpi=130)
    plt.close(fig)

    return {"summary": str(summary_path), "cases": str(cases_path),
            "figure": str(fig_path)}


def write_refinement_report(rates: dict, out_dir, counts: dict | None = None) -> dict:
    """Emit refinement.csv and refinement_rates.png.

    `rates` maps a label (e.g. 'correspondence', 'random-init') to a
    refinement rate in [0, 1] or None.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "refinement.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["initialization", "refinement_rate"])
        for name, rate in rates.items():
            writer.writerow([name, "" if rate is None else f"{rate:.4f}"])
        if counts:
            writer.writerow([])
            for key, value in counts.items():
                writer.writerow([key, value])

    fig, ax = plt.subplots(figsize=(5, 4))
    names = [n for n, r in rates.items() if r is not None]
    values = [rates[n] for n in names]
    ax.bar(names, values, color="#2a6fdb")
    ax.set_ylim(0, 1)
    ax.set_ylabel("refinement rate")
    ax.set_title("grasps surviving rejection sampling")
    for i, r in enumerate(values):
        ax.text(i, r + 0.02, f"{r:.2f}", ha="center")
    fig.tight_layout()
    fig_path = out / "refinement_rates.png"
    fig.savefig(fig_path, dpi=130)
    plt.close(fig)
    return {"table": str(csv_path), "figure": str(fig_path)}


def write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
