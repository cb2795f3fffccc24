"""Summaries of a run directory: one CSV, one text file and PNG figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SUMMARY_FIELDS = ["stage", "skill", "task", "mode", "phase", "selected", "best_fitness",
                  "evaluation_count", "predicted_evaluations", "evaluation_ratio",
                  "retests_executed", "retests_skipped", "predicted_retests",
                  "skeleton_hash_after", "locked_hash_after", "controller", "gates", "baseline_fitness"]


def load_reports(run_dir) -> list[dict]:
    path = Path(run_dir) / "stage_reports.jsonl"
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def summary_rows(reports: list[dict]) -> list[dict]:
    rows = []
    for r in reports:
        enc = r.get("encapsulation") or {}
        pred = r["predicted_evaluations"]
        rows.append({
            "stage": r["stage"], "skill": r["skill"], "task": r["task"], "mode": r["mode"],
            "phase": r["phase"], "selected": r["selected"], "best_fitness": r["best_fitness"],
            "evaluation_count": r["evaluation_count"], "predicted_evaluations": pred,
            "evaluation_ratio": r["evaluation_count"] / pred if pred else float("nan"),
            "retests_executed": r["retests_executed"], "retests_skipped": r["retests_skipped"],
            "predicted_retests": r["predicted_retests"],
            "skeleton_hash_after": r["skeleton_hash_after"], "locked_hash_after": r["locked_hash_after"],
            "controller": enc.get("controller", ""), "gates": len(enc.get("gates", [])),
            "baseline_fitness": enc.get("baseline_fitness", ""),
        })
    return rows


def _summary_text(manifest: dict, reports: list[dict], rows: list[dict]) -> str:
    lines = [f"syllabus: {manifest['syllabus'].get('name', '?')}  mode: {manifest['mode']}  "
             f"seed: {manifest['seed']}",
             f"stages completed: {sum(1 for r in reports if r.get('encapsulation'))} of "
             f"{len(manifest['syllabus']['skills'])}", ""]
    for r, row in zip(reports, rows):
        status = "encapsulated" if r.get("encapsulation") else "FAILED (below floor)"
        lines.append(f"stage {r['stage']}: {r['skill']} [{r['task']}] {status}")
        lines.append(f"  best fitness      {r['best_fitness']:.6f} (survivor {r['selected']} carried on)")
        lines.append(f"  evaluations       {r['evaluation_count']} measured / {r['predicted_evaluations']} "
                     f"predicted (ratio {row['evaluation_ratio']:.3f})")
        lines.append(f"  retests           {r['retests_executed']} executed, {r['retests_skipped']} skipped, "
                     f"{r['predicted_retests']} upper bound")
        lines.append(f"  skeleton hash     {r['skeleton_hash_before'] or '-'} -> {r['skeleton_hash_after']}")
        lines.append(f"  locked hash       {r['locked_hash_before']} -> {r['locked_hash_after']}")
        for rec in r.get("reconciliation", []):
            lines.append(f"  reconciled {rec['skill']}: {rec['before']:.6f} -> {rec['after']:.6f} "
                         f"in {rec['generations']} generations")
        if r.get("baselines"):
            bl = ", ".join(f"{k}={v:.4f}" for k, v in sorted(r["baselines"].items()))
            lines.append(f"  baselines         {bl}")
        lines.append("")
    return "\n".join(lines)


def _plot_histories(reports: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    offset = 0
    for r in reports:
        h = r["history"]
        gens = [offset + row["generation"] for row in h]
        line, = ax.plot(gens, [row["best"] for row in h], label=f"{r['stage']}: {r['skill']} best")
        ax.plot(gens, [row["mean"] for row in h], color=line.get_color(), linestyle="--", linewidth=0.8)
        offset += len(h)
        ax.axvline(offset - 0.5, color="0.8", linewidth=0.8)
    ax.set_xlabel("generation (stages concatenated)")
    ax.set_ylabel("fitness (solid best, dashed mean)")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _plot_costs(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    x = range(len(rows))
    ax.bar([i - 0.2 for i in x], [r["evaluation_count"] for r in rows], width=0.4, label="measured evaluations")
    ax.bar([i + 0.2 for i in x], [r["predicted_evaluations"] for r in rows], width=0.4, label="predicted")
    ax.plot(list(x), [r["retests_executed"] for r in rows], "ko-", label="retests executed")
    ax.set_xticks(list(x), [f"{r['stage']}:{r['skill']}" for r in rows], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def write_report(run_dir, out_dir) -> list[Path]:
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    reports = load_reports(run_dir)
    if not reports:
        raise ValueError(f"stage_reports: {run_dir} has no finished stages")
    rows = summary_rows(reports)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    paths = [out_dir / "summary.csv", out_dir / "summary.txt", out_dir / "fitness_history.png",
             out_dir / "evaluation_costs.png"]
    paths[0].write_text(buf.getvalue())
    paths[1].write_text(_summary_text(manifest, reports, rows))
    _plot_histories(reports, paths[2])
    _plot_costs(rows, paths[3])
    return paths
