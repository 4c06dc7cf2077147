"""Run artifacts, table rendering, and the failure-example gallery.

An artifact is the single JSON file a run leaves behind: report, per-instance
audit trail, configuration fingerprint, and tool version. Table rendering is
a pure function of the artifact, so re-rendering a stored artifact is
byte-identical, and every table cell can be recomputed from the audit alone.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .engine import (
    CoherencyReport,
    InstanceResult,
    RelationScore,
    StepRecord,
    SweepRelationScore,
    SweepReport,
    SweepSample,
    TYPE_KEYS,
    format_percent,
)
from .types import CoherevalError, RelType, TOOL_VERSION


class ReportError(CoherevalError):
    pass


TABLE_FORMATS = ("json", "csv", "markdown")

DEFAULT_STOP_LIST = ("it", "he", "she", "they", "this", "that")

BUCKET_NAMES = (
    "coherent_correct",
    "coherent_incorrect",
    "incoherent_correct",
    "incoherent_incorrect",
)


@dataclass
class RunArtifact:
    kind: str  # "coherency" | "sweep"
    fingerprint: dict
    report: CoherencyReport | SweepReport
    audit: tuple | None
    tool_version: str = TOOL_VERSION


def run_id(artifact: RunArtifact) -> str:
    canonical = json.dumps(artifact.fingerprint, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


# --------------------------------------------------------------------------
# JSON serialization
# --------------------------------------------------------------------------


def _step_to_json(step: StepRecord) -> dict:
    return {
        "prompt": step.prompt,
        "prediction": step.prediction,
        "rank": step.rank,
        "score": step.score,
        "banned_count": step.banned_count,
        "no_prediction": step.no_prediction,
    }


def _step_from_json(payload: dict) -> StepRecord:
    return StepRecord(
        prompt=payload["prompt"],
        prediction=payload["prediction"],
        rank=payload["rank"],
        score=payload["score"],
        banned_count=payload["banned_count"],
        no_prediction=payload["no_prediction"],
    )


def _instance_to_json(result: InstanceResult) -> dict:
    return {
        "relation_id": result.relation_id,
        "triple_index": result.triple_index,
        "subject": result.subject,
        "object": result.object,
        "round1_coherent": result.round1_coherent,
        "round2_coherent": result.round2_coherent,
        "c1": result.c1,
        "c2": result.c2,
        "all_correct": result.all_correct,
        "steps": [_step_to_json(s) for s in result.steps],
    }


def _instance_from_json(payload: dict) -> InstanceResult:
    steps = tuple(_step_from_json(s) for s in payload["steps"])
    if len(steps) != 4:
        raise ReportError("instance audit record must have four steps")
    return InstanceResult(
        relation_id=payload["relation_id"],
        triple_index=payload["triple_index"],
        subject=payload["subject"],
        object=payload["object"],
        round1_coherent=payload["round1_coherent"],
        round2_coherent=payload["round2_coherent"],
        c1=payload["c1"],
        c2=payload["c2"],
        all_correct=payload["all_correct"],
        steps=steps,  # type: ignore[arg-type]
    )


def _coherency_report_to_json(report: CoherencyReport) -> dict:
    relations = []
    for score in report.relation_scores:
        relations.append(
            {
                "relation_id": score.relation_id,
                "rel_type": score.rel_type.value,
                "symmetric": score.symmetric,
                "instances": score.instances,
                "round1_hits": score.round1_hits,
                "round2_hits": score.round2_hits,
                "c1_hits": score.c1_hits,
                "c2_hits": score.c2_hits,
                "all_correct_hits": score.all_correct_hits,
                "scores": {
                    "round1": format_percent(score.round1),
                    "round2": format_percent(score.round2),
                    "avg": format_percent(score.avg),
                    "c1": format_percent(score.c1),
                    "c2": format_percent(score.c2),
                    "all_correct": format_percent(score.all_correct),
                },
            }
        )
    per_type = {}
    for key, agg in report.per_type().items():
        per_type[key] = {
            "relations": agg.relations,
            "instances": agg.instances,
            "round1": format_percent(agg.round1) if agg.round1 is not None else None,
            "round2": format_percent(agg.round2) if agg.round2 is not None else None,
            "avg": format_percent(agg.avg) if agg.avg is not None else None,
        }
    return {
        "relations": relations,
        "macro": {
            "round1": format_percent(report.macro_round1),
            "round2": format_percent(report.macro_round2),
            "avg": format_percent(report.macro_avg),
            "c1": format_percent(report.macro_c1),
            "c2": format_percent(report.macro_c2),
            "all_correct": format_percent(report.macro_all_correct),
        },
        "per_type": per_type,
        "total_instances": report.total_instances,
        "skipped_instances": report.skipped_instances,
        "skipped_relations": [list(pair) for pair in report.skipped_relations],
    }


def _coherency_report_from_json(payload: dict) -> CoherencyReport:
    scores = tuple(
        RelationScore(
            relation_id=r["relation_id"],
            rel_type=RelType(r["rel_type"]),
            symmetric=r["symmetric"],
            instances=r["instances"],
            round1_hits=r["round1_hits"],
            round2_hits=r["round2_hits"],
            c1_hits=r["c1_hits"],
            c2_hits=r["c2_hits"],
            all_correct_hits=r["all_correct_hits"],
        )
        for r in payload["relations"]
    )
    return CoherencyReport(
        relation_scores=scores,
        skipped_relations=tuple((a, b) for a, b in payload.get("skipped_relations", [])),
        skipped_instances=payload.get("skipped_instances", 0),
    )


def _sweep_report_to_json(report: SweepReport) -> dict:
    relations = []
    for relation in report.relations:
        relations.append(
            {
                "relation_id": relation.relation_id,
                "samples": [
                    {
                        "run": s.run,
                        "template_index": s.template_index,
                        "instances": s.instances,
                        "round1_hits": s.round1_hits,
                        "round2_hits": s.round2_hits,
                        "score": format_percent(s.score),
                    }
                    for s in relation.samples
                ],
                "min": format_percent(relation.min),
                "avg": format_percent(relation.avg),
                "max": format_percent(relation.max),
                "stddev": f"{relation.stddev * 100:.2f}",
            }
        )
    return {
        "runs": report.runs,
        "seed": report.seed,
        "total_instances": report.total_instances,
        "relations": relations,
        "macro": {
            "min": format_percent(report.macro_min),
            "avg": format_percent(report.macro_avg),
            "max": format_percent(report.macro_max),
        },
        "run_macros": [format_percent(m) for m in report.run_macros()],
        "skipped_relations": [list(pair) for pair in report.skipped_relations],
    }


def _sweep_report_from_json(payload: dict) -> SweepReport:
    relations = tuple(
        SweepRelationScore(
            relation_id=r["relation_id"],
            samples=tuple(
                SweepSample(
                    run=s["run"],
                    template_index=s["template_index"],
                    instances=s["instances"],
                    round1_hits=s["round1_hits"],
                    round2_hits=s["round2_hits"],
                )
                for s in r["samples"]
            ),
        )
        for r in payload["relations"]
    )
    return SweepReport(
        relations=relations,
        runs=payload["runs"],
        seed=payload["seed"],
        skipped_relations=tuple((a, b) for a, b in payload.get("skipped_relations", [])),
    )


def artifact_to_json_dict(artifact: RunArtifact) -> dict:
    if artifact.kind == "coherency":
        report = _coherency_report_to_json(artifact.report)  # type: ignore[arg-type]
        audit = [_instance_to_json(r) for r in artifact.audit] if artifact.audit is not None else None
    elif artifact.kind == "sweep":
        report = _sweep_report_to_json(artifact.report)  # type: ignore[arg-type]
        audit = (
            [[_instance_to_json(r) for r in run] for run in artifact.audit]
            if artifact.audit is not None
            else None
        )
    else:
        raise ReportError(f"unknown artifact kind {artifact.kind!r}")
    return {
        "artifact": "cohereval-run",
        "version": 1,
        "kind": artifact.kind,
        "tool_version": artifact.tool_version,
        "fingerprint": artifact.fingerprint,
        "report": report,
        "audit": audit,
    }


def artifact_from_json_dict(payload: dict) -> RunArtifact:
    if payload.get("artifact") != "cohereval-run":
        raise ReportError("not a run artifact file")
    kind = payload["kind"]
    if kind == "coherency":
        report = _coherency_report_from_json(payload["report"])
        audit = (
            tuple(_instance_from_json(r) for r in payload["audit"])
            if payload.get("audit") is not None
            else None
        )
    elif kind == "sweep":
        report = _sweep_report_from_json(payload["report"])
        audit = (
            tuple(tuple(_instance_from_json(r) for r in run) for run in payload["audit"])
            if payload.get("audit") is not None
            else None
        )
    else:
        raise ReportError(f"unknown artifact kind {kind!r}")
    return RunArtifact(
        kind=kind,
        fingerprint=payload["fingerprint"],
        report=report,
        audit=audit,
        tool_version=payload.get("tool_version", TOOL_VERSION),
    )


def artifact_bytes(artifact: RunArtifact) -> bytes:
    return (json.dumps(artifact_to_json_dict(artifact), sort_keys=True, indent=2) + "\n").encode("utf-8")


def save_artifact(artifact: RunArtifact, path: str | Path) -> Path:
    """Write the artifact atomically (write-then-rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    tmp.write_bytes(artifact_bytes(artifact))
    os.replace(tmp, path)
    return path


def load_artifact(path: str | Path) -> RunArtifact:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportError(f"cannot load artifact {path}: {exc}") from exc
    return artifact_from_json_dict(payload)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


def _label(artifact: RunArtifact) -> str:
    return str(artifact.fingerprint.get("label") or artifact.fingerprint.get("backend") or "run")


def _render(header: list[str], rows: list[list[str]], fmt: str) -> str:
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
        lines.extend("| " + " | ".join(row) + " |" for row in rows)
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buffer.getvalue()
    if fmt == "json":
        return json.dumps({"header": header, "rows": rows}, indent=2) + "\n"
    raise ReportError(f"unknown table format {fmt!r}; expected one of {TABLE_FORMATS}")


def emit_tables(artifact: RunArtifact, fmt: str = "markdown") -> dict[str, str]:
    """Render the artifact's tables; numbers follow the engine rounding rules."""
    label = _label(artifact)
    if artifact.kind == "sweep":
        report: SweepReport = artifact.report  # type: ignore[assignment]
        if not report.relations:
            raise ReportError("nothing to render: sweep artifact has no relation scores")
        header = ["Model", "Min.", "Avg.", "Max.", "#Instances"]
        rows = [
            [
                label,
                format_percent(report.macro_min),
                format_percent(report.macro_avg),
                format_percent(report.macro_max),
                str(report.total_instances),
            ]
        ]
        return {"sweep": _render(header, rows, fmt)}

    report: CoherencyReport = artifact.report  # type: ignore[no-redef]
    if not report.relation_scores:
        raise ReportError("nothing to render: report has no relation scores")
    coherency = _render(
        ["Model", "Round 1", "Round 2", "Avg.", "#Instances"],
        [
            [
                label,
                format_percent(report.macro_round1),
                format_percent(report.macro_round2),
                format_percent(report.macro_avg),
                str(report.total_instances),
            ]
        ],
        fmt,
    )
    correctness = _render(
        ["Model", "c1", "c2", "All correct", "#relations", "#Instances"],
        [
            [
                label,
                format_percent(report.macro_c1),
                format_percent(report.macro_c2),
                format_percent(report.macro_all_correct),
                str(len(report.relation_scores)),
                str(report.total_instances),
            ]
        ],
        fmt,
    )
    per_type = report.per_type()
    header = ["Model"]
    row = [label]
    for key in TYPE_KEYS:
        agg = per_type[key]
        header.extend([f"{key} Coherency", f"{key} #Instances"])
        row.extend([format_percent(agg.avg) if agg.avg is not None else "-", str(agg.instances)])
    return {
        "coherency": coherency,
        "correctness": correctness,
        "per_type": _render(header, [row], fmt),
    }


# --------------------------------------------------------------------------
# Example gallery
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GalleryExample:
    bucket: str
    tags: tuple[str, ...]
    relation_id: str
    triple_index: int
    round: int
    subject: str
    object: str
    first_prompt: str
    first_prediction: str
    second_prompt: str
    second_prediction: str


def _match_key(text: str | None) -> str:
    if text is None:
        return ""
    text = text.strip()
    if text.endswith("."):
        text = text[:-1]
    return text.strip().lower()


def example_gallery(
    artifact: RunArtifact,
    per_bucket: int = 3,
    stop_list: tuple[str, ...] = DEFAULT_STOP_LIST,
) -> dict[str, list[GalleryExample]]:
    """Bucket audited rounds by (coherent, first-step correct) with sub-tags.

    Each entry is one round of one instance: both prompts and both
    predictions. Rounds where a step produced no prediction are left out,
    since there is nothing to display for them; they remain visible in the
    audit trail and the skip counters. The ``repetition`` tag marks rounds
    whose second answer merely echoes the pivot; ``pronoun`` marks answers
    from the stop list.
    """
    if artifact.kind != "coherency":
        raise ReportError("the example gallery needs a coherency artifact")
    if artifact.audit is None:
        raise ReportError("the example gallery needs the audit trail (run without --no-audit)")
    stop = {s.lower() for s in stop_list}
    buckets: dict[str, list[GalleryExample]] = {name: [] for name in BUCKET_NAMES}
    for result in artifact.audit:
        rounds = (
            (1, result.steps[0], result.steps[1], result.round1_coherent, result.c1),
            (2, result.steps[2], result.steps[3], result.round2_coherent, result.c2),
        )
        for round_no, first, second, coherent, first_correct in rounds:
            if first.no_prediction or second.no_prediction:
                continue
            bucket = BUCKET_NAMES[(1 - coherent) * 2 + (1 - first_correct)]
            if len(buckets[bucket]) >= per_bucket:
                continue
            tags = []
            if _match_key(second.prediction) == _match_key(first.prediction):
                tags.append("repetition")
            if _match_key(first.prediction) in stop or _match_key(second.prediction) in stop:
                tags.append("pronoun")
            buckets[bucket].append(
                GalleryExample(
                    bucket=bucket,
                    tags=tuple(tags),
                    relation_id=result.relation_id,
                    triple_index=result.triple_index,
                    round=round_no,
                    subject=result.subject,
                    object=result.object,
                    first_prompt=first.prompt,
                    first_prediction=first.prediction or "",
                    second_prompt=second.prompt,
                    second_prediction=second.prediction or "",
                )
            )
    return buckets


# --------------------------------------------------------------------------
# Per-relation sweep series
# --------------------------------------------------------------------------


def emit_relation_series(artifact: RunArtifact) -> list[dict]:
    """Per-relation mean and population stddev over sampled templates."""
    if artifact.kind != "sweep":
        raise ReportError("relation series need a sweep artifact")
    report: SweepReport = artifact.report  # type: ignore[assignment]
    return [
        {
            "relation_id": relation.relation_id,
            "mean": format_percent(relation.avg),
            "stddev": f"{relation.stddev * 100:.2f}",
            "samples": len(relation.samples),
        }
        for relation in report.relations
    ]


def relation_series_csv(artifact: RunArtifact) -> str:
    records = emit_relation_series(artifact)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["relation_id", "mean", "stddev", "samples"])
    for record in records:
        writer.writerow([record["relation_id"], record["mean"], record["stddev"], record["samples"]])
    return buffer.getvalue()
