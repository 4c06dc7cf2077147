from __future__ import annotations

import json
from fractions import Fraction

import pytest

from cohereval.backends.synthetic import ECHO, PERFECT, SyntheticBackend
from cohereval.corpus import Relation, Triple, build_answer_index
from cohereval.engine import (
    InstanceResult,
    SweepReport,
    aggregate,
    evaluate_corpus,
    format_percent,
    paraphrase_sweep,
    _SKIPPED_STEP,
)
from cohereval.reporting import (
    ReportError,
    RunArtifact,
    artifact_bytes,
    artifact_from_json_dict,
    artifact_to_json_dict,
    emit_relation_series,
    emit_tables,
    example_gallery,
    load_artifact,
    relation_series_csv,
    run_id,
    save_artifact,
)
from cohereval.types import Direction, RelType

from support import ScriptedBackend, kb_from_corpus, make_corpus


def _bit_result(rel_id, idx, r1, r2):
    return InstanceResult(
        relation_id=rel_id,
        triple_index=idx,
        subject=f"s{idx}",
        object=f"o{idx}",
        round1_coherent=r1,
        round2_coherent=r2,
        c1=0,
        c2=0,
        all_correct=0,
        steps=(_SKIPPED_STEP, _SKIPPED_STEP, _SKIPPED_STEP, _SKIPPED_STEP),
    )


@pytest.fixture
def anchor_artifact():
    """A report whose injected bits reproduce the 9.74 / 11.81 / 10.78 row."""
    relation = Relation(id="r", template="[X] maps to [Y]", rel_type=RelType.ONE_TO_ONE)
    results = [
        _bit_result("r", i, 1 if i < 974 else 0, 1 if i < 1181 else 0) for i in range(10000)
    ]
    report = aggregate(results, {"r": relation})
    return RunArtifact(
        kind="coherency",
        fingerprint={"backend": "scripted", "label": "bert-base", "seed": 0},
        report=report,
        audit=tuple(results),
    )


@pytest.fixture
def perfect_artifact(mixed_kb_corpus):
    kb, corpus = mixed_kb_corpus
    run = evaluate_corpus(SyntheticBackend(kb), corpus)
    return RunArtifact(
        kind="coherency",
        fingerprint={"backend": "synthetic", "seed": kb.seed},
        report=run.report,
        audit=run.results,
    )


@pytest.fixture
def sweep_artifact(mixed_kb_corpus):
    kb, corpus = mixed_kb_corpus
    sweep = paraphrase_sweep(SyntheticBackend(kb), corpus, runs=3, seed=5)
    return RunArtifact(
        kind="sweep",
        fingerprint={"backend": "synthetic", "seed": 5, "runs": 3},
        report=sweep.report,
        audit=sweep.results_per_run,
    )


class TestTables:
    def test_markdown_anchor_row(self, anchor_artifact):
        tables = emit_tables(anchor_artifact, "markdown")
        assert "| bert-base | 9.74 | 11.81 | 10.78 | 10000 |" in tables["coherency"]

    def test_csv_and_markdown_share_numeric_strings(self, perfect_artifact):
        md = emit_tables(perfect_artifact, "markdown")
        csv_tables = emit_tables(perfect_artifact, "csv")
        for name in md:
            md_numbers = [
                cell.strip()
                for line in md[name].splitlines()[2:]  # skip header and separator
                for cell in line.strip("|").split("|")
                if cell.strip() and cell.strip()[0].isdigit()
            ]
            csv_numbers = [
                cell for line in csv_tables[name].splitlines()[1:] for cell in line.split(",") if cell and cell[0].isdigit()
            ]
            assert md_numbers == csv_numbers

    def test_json_format_carries_same_cells(self, anchor_artifact):
        payload = json.loads(emit_tables(anchor_artifact, "json")["coherency"])
        assert payload["rows"][0][1:4] == ["9.74", "11.81", "10.78"]

    def test_rendering_is_pure(self, perfect_artifact):
        first = emit_tables(perfect_artifact, "markdown")
        second = emit_tables(perfect_artifact, "markdown")
        assert first == second

    def test_correctness_table_shape(self, perfect_artifact):
        table = emit_tables(perfect_artifact, "markdown")["correctness"]
        header = table.splitlines()[0]
        for column in ("c1", "c2", "All correct", "#relations", "#Instances"):
            assert column in header

    def test_per_type_table_covers_every_bucket(self, perfect_artifact):
        header = emit_tables(perfect_artifact, "markdown")["per_type"].splitlines()[0]
        for key in ("1-1", "N-1", "N-M", "symmetric", "All"):
            assert f"{key} Coherency" in header

    def test_sweep_table(self, sweep_artifact):
        table = emit_tables(sweep_artifact, "markdown")["sweep"]
        assert "Min." in table and "Max." in table

    def test_unknown_format_rejected(self, perfect_artifact):
        with pytest.raises(ReportError, match="format"):
            emit_tables(perfect_artifact, "xml")

    def test_empty_sweep_is_nothing_to_render(self):
        artifact = RunArtifact(
            kind="sweep",
            fingerprint={},
            report=SweepReport(relations=(), runs=1, seed=0),
            audit=None,
        )
        with pytest.raises(ReportError, match="nothing to render"):
            emit_tables(artifact, "markdown")

    def test_audit_recomputes_every_cell(self, perfect_artifact):
        report = perfect_artifact.report
        by_relation: dict[str, list[InstanceResult]] = {}
        for result in perfect_artifact.audit:
            by_relation.setdefault(result.relation_id, []).append(result)
        for score in report.relation_scores:
            group = by_relation[score.relation_id]
            assert score.instances == len(group)
            assert score.round1_hits == sum(r.round1_coherent for r in group)
            assert score.round2_hits == sum(r.round2_coherent for r in group)
            assert score.c1_hits == sum(r.c1 for r in group)
            assert score.c2_hits == sum(r.c2 for r in group)
            assert score.all_correct_hits == sum(r.all_correct for r in group)
        recomputed_macro = sum(
            (Fraction(sum(r.round1_coherent for r in group), len(group)) for group in by_relation.values()),
            start=Fraction(0),
        ) / len(by_relation)
        assert format_percent(recomputed_macro) == format_percent(report.macro_round1)


class TestArtifacts:
    def test_round_trip_preserves_bytes(self, perfect_artifact, tmp_path):
        path = save_artifact(perfect_artifact, tmp_path / "run.artifact.json")
        loaded = load_artifact(path)
        assert artifact_bytes(loaded) == artifact_bytes(perfect_artifact)
        assert emit_tables(loaded, "markdown") == emit_tables(perfect_artifact, "markdown")

    def test_sweep_round_trip(self, sweep_artifact, tmp_path):
        path = save_artifact(sweep_artifact, tmp_path / "sweep.artifact.json")
        loaded = load_artifact(path)
        assert artifact_bytes(loaded) == artifact_bytes(sweep_artifact)

    def test_no_temp_files_left_behind(self, perfect_artifact, tmp_path):
        save_artifact(perfect_artifact, tmp_path / "run.artifact.json")
        assert [p.name for p in tmp_path.iterdir()] == ["run.artifact.json"]

    def test_run_id_depends_only_on_fingerprint(self, perfect_artifact, anchor_artifact):
        other = RunArtifact(
            kind="coherency",
            fingerprint=dict(perfect_artifact.fingerprint),
            report=anchor_artifact.report,
            audit=None,
        )
        assert run_id(other) == run_id(perfect_artifact)

    def test_non_artifact_file_rejected(self, tmp_path):
        (tmp_path / "x.json").write_text("{}", encoding="utf-8")
        with pytest.raises(ReportError):
            load_artifact(tmp_path / "x.json")

    def test_json_dict_round_trip(self, sweep_artifact):
        payload = artifact_to_json_dict(sweep_artifact)
        rebuilt = artifact_from_json_dict(json.loads(json.dumps(payload)))
        assert artifact_bytes(rebuilt) == artifact_bytes(sweep_artifact)


class TestGallery:
    def test_perfect_run_fills_only_the_good_bucket(self, geo_corpus):
        # 1-1 facts: the first prediction of either round has a unique correct
        # answer, so a fact-lookup backend is correct as well as coherent. On
        # fan-in relations no backend can be first-step correct for every
        # instance of a shared pivot, so this check uses 1-1 data.
        relation = geo_corpus.relations["capital-of"]
        corpus = make_corpus([relation], list(geo_corpus.groups["capital-of"]))
        run = evaluate_corpus(SyntheticBackend(kb_from_corpus(corpus, PERFECT)), corpus)
        artifact = RunArtifact(kind="coherency", fingerprint={}, report=run.report, audit=run.results)
        gallery = example_gallery(artifact, per_bucket=10)
        assert gallery["coherent_correct"]
        assert gallery["coherent_incorrect"] == []
        assert gallery["incoherent_correct"] == []
        assert gallery["incoherent_incorrect"] == []

    def test_echo_run_tags_repetition(self, geo_corpus):
        backend = SyntheticBackend(kb_from_corpus(geo_corpus, ECHO))
        run = evaluate_corpus(backend, geo_corpus)
        artifact = RunArtifact(kind="coherency", fingerprint={}, report=run.report, audit=run.results)
        gallery = example_gallery(artifact, per_bucket=100)
        failures = gallery["incoherent_correct"] + gallery["incoherent_incorrect"]
        assert failures
        assert all("repetition" in e.tags for e in failures)

    def test_pronoun_tag_from_stop_list(self, geo_corpus, geo_index):
        backend = ScriptedBackend(
            {
                (Direction.PREDICT_OBJECT, "Munich"): ["Bavaria"],
                (Direction.PREDICT_SUBJECT, "Bavaria"): ["it"],
                (Direction.PREDICT_SUBJECT, "bavaria"): ["it"],
                (Direction.PREDICT_OBJECT, "it"): ["nothing"],
            }
        )
        relation = geo_corpus.relations["located-in"]
        corpus = make_corpus([relation], [Triple("Munich", "Bavaria", "located-in")])
        run = evaluate_corpus(backend, corpus)
        artifact = RunArtifact(kind="coherency", fingerprint={}, report=run.report, audit=run.results)
        gallery = example_gallery(artifact, per_bucket=10)
        tagged = [e for bucket in gallery.values() for e in bucket if "pronoun" in e.tags]
        assert tagged
        assert any(e.second_prediction == "it" for e in tagged)

    def test_round_entries_carry_both_prompts(self, perfect_artifact):
        gallery = example_gallery(perfect_artifact, per_bucket=1)
        entry = gallery["coherent_correct"][0]
        assert entry.first_prompt and entry.second_prompt
        assert entry.round in (1, 2)

    def test_gallery_needs_audit(self, perfect_artifact):
        stripped = RunArtifact(
            kind="coherency", fingerprint={}, report=perfect_artifact.report, audit=None
        )
        with pytest.raises(ReportError, match="audit"):
            example_gallery(stripped)

    def test_gallery_rejects_sweep_artifacts(self, sweep_artifact):
        with pytest.raises(ReportError, match="coherency"):
            example_gallery(sweep_artifact)


class TestRelationSeries:
    def test_constant_scores_have_zero_stddev(self, sweep_artifact):
        series = emit_relation_series(sweep_artifact)
        assert len(series) == len(sweep_artifact.report.relations)
        for record in series:  # perfect backend: identical scores across runs
            assert record["stddev"] == "0.00"
            assert record["mean"] == "100.00"

    def test_two_point_series_stats(self):
        from cohereval.engine import SweepRelationScore, SweepSample

        relation = SweepRelationScore(
            relation_id="r",
            samples=(
                SweepSample(run=0, template_index=0, instances=2, round1_hits=0, round2_hits=0),
                SweepSample(run=1, template_index=1, instances=2, round1_hits=2, round2_hits=2),
            ),
        )
        report = SweepReport(relations=(relation,), runs=2, seed=0)
        artifact = RunArtifact(kind="sweep", fingerprint={}, report=report, audit=None)
        series = emit_relation_series(artifact)
        assert series[0]["mean"] == "50.00"
        assert series[0]["stddev"] == "50.00"

    def test_csv_export(self, sweep_artifact):
        text = relation_series_csv(sweep_artifact)
        lines = text.splitlines()
        assert lines[0] == "relation_id,mean,stddev,samples"
        assert len(lines) == 1 + len(sweep_artifact.report.relations)

    def test_series_rejects_coherency_artifacts(self, perfect_artifact):
        with pytest.raises(ReportError, match="sweep"):
            emit_relation_series(perfect_artifact)
