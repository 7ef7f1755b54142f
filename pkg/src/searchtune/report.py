"""Study report serialization (JSON/JSONL/CSV) and terminal rendering."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Mapping

from .meta import StudyReport, TallyRow
from .space import trial_to_dict


def _tally_row_to_dict(row: TallyRow) -> dict:
    return {
        "trial_id": row.trial_id,
        "config": dict(row.config.assignments),
        "votes": row.votes,
        "criteria": dict(row.criteria),
        "weighted": row.weighted,
    }


def report_to_dict(report: StudyReport) -> dict:
    return {
        "header": report.header,
        "stages": [
            {
                "stage": s.stage,
                "n_seeded": s.n_seeded,
                "n_sampled": s.n_sampled,
                "best_weighted": s.best_weighted,
                "best_trial_id": s.best_trial_id,
                "top_ids": s.top_ids,
                "meta_scores": [
                    {
                        "trial_id": ms.trial_id,
                        "config": dict(ms.config.assignments),
                        "criteria": dict(ms.criteria),
                    }
                    for ms in s.meta_scores
                ],
                "tally": [_tally_row_to_dict(r) for r in s.tally.rows],
                "winner": {"trial_id": s.winner_trial_id, "config": dict(s.winner_config.assignments)},
            }
            for s in report.stages
        ],
        "pareto_ids": report.pareto_ids,
        "final_winner": _tally_row_to_dict(report.final_winner),
        "winner_detail": {
            "aggregates": {
                spec_name: report.winner_detail.aggregates[i]
                for i, spec_name in enumerate(report.winner_detail.per_metric)
            },
            "per_metric": report.winner_detail.per_metric,
            "excluded": report.winner_detail.excluded,
        },
        "trials": [trial_to_dict(t) for t in report.trials],
    }


def trials_csv_text(report_dict: Mapping[str, Any]) -> str:
    """Flat CSV: one row per trial with param and objective columns."""
    trials = report_dict["trials"]
    param_names = list(report_dict["header"].get("space", []))
    objective_names = [o["name"] for o in report_dict["header"].get("objectives", [])]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["id", "stage", "provenance"]
        + [f"param:{p}" for p in param_names]
        + [f"objective:{o}" for o in objective_names]
    )
    for t in trials:
        writer.writerow(
            [t["id"], t["stage"], t["provenance"]]
            + [t["config"].get(p) for p in param_names]
            + list(t["objective_values"])
        )
    return buf.getvalue()


def write_report_files(report: StudyReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, trials.jsonl, trials.csv, and pareto.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rdict = report_to_dict(report)
    paths = {
        "report": out / "report.json",
        "trials_jsonl": out / "trials.jsonl",
        "trials_csv": out / "trials.csv",
        "pareto": out / "pareto.jsonl",
    }
    paths["report"].write_text(json.dumps(rdict, indent=2) + "\n", encoding="utf-8")
    with open(paths["trials_jsonl"], "w", encoding="utf-8") as fh:
        for t in rdict["trials"]:
            fh.write(json.dumps(t) + "\n")
    paths["trials_csv"].write_text(trials_csv_text(rdict), encoding="utf-8")
    pareto = set(rdict["pareto_ids"])
    with open(paths["pareto"], "w", encoding="utf-8") as fh:
        for t in rdict["trials"]:
            if t["id"] in pareto:
                fh.write(json.dumps(t) + "\n")
    return paths


def load_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def render_text(report_dict: Mapping[str, Any]) -> str:
    """Human-readable summary with an objectives-by-metrics grid for the
    winner's meta scores."""
    header = report_dict["header"]
    lines = []
    sampler = header.get("sampler", {})
    lines.append(
        f"study: sampler={sampler.get('name')} mode={sampler.get('mode')} "
        f"seed={header.get('seed')} stages={len(report_dict['stages'])}"
    )
    for s in report_dict["stages"]:
        lines.append(
            f"stage {s['stage']}: trials={s['n_seeded'] + s['n_sampled']} "
            f"({s['n_seeded']} seeded), best weighted={s['best_weighted']:.4f} "
            f"(trial {s['best_trial_id']}), winner trial {s['winner']['trial_id']}"
        )
    lines.append(f"pareto front: {len(report_dict['pareto_ids'])} trials")
    winner = report_dict["final_winner"]
    lines.append(
        f"winner: trial {winner['trial_id']} votes={winner['votes']} "
        f"meta weighted={winner['weighted']:.4f}"
    )
    config_str = " ".join(f"{k}={_fmt(v)}" for k, v in winner["config"].items())
    lines.append(f"  config: {config_str}")
    per_metric = report_dict["winner_detail"]["per_metric"]
    metric_labels = sorted({label for grid in per_metric.values() for label in grid})
    if metric_labels:
        lines.append("winner meta metrics:")
        head = ["objective"] + metric_labels + ["avg"]
        rows = [head]
        aggregates = report_dict["winner_detail"]["aggregates"]
        for obj, grid in per_metric.items():
            rows.append(
                [obj]
                + [(_fmt(grid[label]) if label in grid else "-") for label in metric_labels]
                + [_fmt(aggregates[obj])]
            )
        widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
        for r in rows:
            lines.append("  " + "  ".join(cell.ljust(w) for cell, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_csv(report_dict: Mapping[str, Any]) -> str:
    """One row per (stage, criterion): the training top trial and the stage
    winner's meta score on that criterion."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["stage", "criterion", "train_top_trial_id", "winner_trial_id", "winner_meta_score"])
    for s in report_dict["stages"]:
        winner_id = s["winner"]["trial_id"]
        winner_row = next(r for r in s["tally"] if r["trial_id"] == winner_id)
        for criterion, ids in s["top_ids"].items():
            writer.writerow(
                [
                    s["stage"],
                    criterion,
                    ids[0] if ids else "",
                    winner_id,
                    winner_row["criteria"][criterion],
                ]
            )
    return buf.getvalue()
