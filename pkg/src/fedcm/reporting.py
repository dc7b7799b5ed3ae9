"""Serialization of run results: JSON summaries and per-round CSV series.

All files are written via temp-file-plus-rename so an interrupted run never
leaves a truncated artifact behind. Summaries embed the fully resolved config
and seed so any output can be replayed.
"""

from __future__ import annotations

import dataclasses
import json
import os

from .orchestrator import RunSummary


def _fmt(x: float) -> str:
    return format(x, ".10g")


def write_text_atomic(text: str, path: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json_atomic(obj, path: str) -> None:
    write_text_atomic(json.dumps(obj, indent=2, sort_keys=True) + "\n", path)


def summary_to_dict(summary: RunSummary) -> dict:
    cfg = dataclasses.asdict(summary.config)
    cfg["hidden_dims"] = list(cfg["hidden_dims"])
    rounds = []
    for r in summary.reports:
        entry = {
            "round": r.round,
            "per_concept_accuracy": [float(a) for a in r.per_concept_accuracy],
            "weighted_avg_accuracy": r.weighted_avg_accuracy,
            "ari": r.ari,
            "cluster_count": r.cluster_count,
            "match_correct": sum(f.correct for f in r.client_matches),
            "match_total": len(r.client_matches),
        }
        if r.server_assignments is not None:
            entry["server_assignments"] = [
                {"cluster_id": a.cluster_id, "concept_id": a.concept_id,
                 "match_distance": a.match_distance}
                for a in r.server_assignments]
        rounds.append(entry)
    return {
        "mode": summary.mode,
        "config": cfg,
        "seed": summary.config.seed,
        "final_per_concept_accuracy": [float(a) for a in summary.final_per_concept_accuracy],
        "final_weighted_accuracy": summary.final_weighted_accuracy,
        "mean_ari": summary.mean_ari,
        "min_ari": summary.min_ari,
        "rounds_with_perfect_clustering": summary.rounds_with_perfect_clustering,
        "concept_matching_accuracy": summary.concept_matching_accuracy,
        "rounds": rounds,
    }


def rounds_csv_text(summary: RunSummary) -> str:
    k = summary.config.n_concepts_true
    header = (["round"] + [f"acc_c{i}" for i in range(k)]
              + ["weighted_acc", "ari", "cluster_count", "match_correct", "match_total"])
    lines = [",".join(header)]
    for r in summary.reports:
        row = [str(r.round)]
        row += [_fmt(a) for a in r.per_concept_accuracy]
        row.append(_fmt(r.weighted_avg_accuracy))
        row.append(_fmt(r.ari) if r.ari is not None else "")
        row.append(str(r.cluster_count) if r.cluster_count is not None else "")
        if r.client_matches:
            row.append(str(sum(f.correct for f in r.client_matches)))
            row.append(str(len(r.client_matches)))
        else:
            row += ["", ""]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def compare_csv_text(cm: RunSummary, vanilla: RunSummary) -> str:
    k = cm.config.n_concepts_true
    header = (["round"] + [f"cm_acc_c{i}" for i in range(k)] + ["cm_weighted"]
              + [f"vanilla_acc_c{i}" for i in range(k)] + ["vanilla_weighted"])
    lines = [",".join(header)]
    for rc, rv in zip(cm.reports, vanilla.reports):
        row = [str(rc.round)]
        row += [_fmt(a) for a in rc.per_concept_accuracy]
        row.append(_fmt(rc.weighted_avg_accuracy))
        row += [_fmt(a) for a in rv.per_concept_accuracy]
        row.append(_fmt(rv.weighted_avg_accuracy))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_summary(summary: RunSummary, out_dir: str, stem: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{stem}.json")
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    write_json_atomic(summary_to_dict(summary), json_path)
    write_text_atomic(rounds_csv_text(summary), csv_path)
    return json_path, csv_path
