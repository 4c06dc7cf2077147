"""Triple corpora, relation metadata, and the filtered-setting answer index.

Triples and relations live in line-delimited JSON. A triples file uses the
keys ``sub_label`` / ``obj_label`` and names its relation either per line
(``predicate_id``) or through per-relation file naming when a directory is
loaded. Relations carry a cloze template with a ``[X]`` subject slot and a
``[Y]`` object slot plus optional template variants.
"""
from __future__ import annotations

import json
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field, replace
from pathlib import Path

from .types import OBJECT_SLOT, SUBJECT_SLOT, CoherevalError, Direction, RelType


class CorpusError(CoherevalError):
    """Unreadable, malformed, or internally inconsistent corpus input."""


def normalize_entity(text: str) -> str:
    """Normalization for index keys and banning: trim + lowercase only."""
    return text.strip().lower()


def _check_slots(template: str, where: str) -> None:
    for slot in (SUBJECT_SLOT, OBJECT_SLOT):
        n = template.count(slot)
        if n != 1:
            raise CorpusError(f"{where}: template must contain {slot} exactly once, found {n}: {template!r}")


@dataclass(frozen=True)
class Triple:
    """One (subject, relation, object) fact, optionally with evidence text."""

    subject: str
    object: str
    relation_id: str
    evidence: str | None = None


@dataclass(frozen=True)
class Relation:
    """Relation metadata: templates, cardinality type, and symmetry flag."""

    id: str
    template: str
    rel_type: RelType
    symmetric: bool = False
    optimized_template: str | None = None
    paraphrases: tuple[str, ...] = ()
    ar_object_last: str | None = None
    ar_subject_last: str | None = None

    def __post_init__(self) -> None:
        _check_slots(self.template, f"relation {self.id}")
        if self.optimized_template is not None:
            _check_slots(self.optimized_template, f"relation {self.id} (optimized)")
        for i, p in enumerate(self.paraphrases):
            _check_slots(p, f"relation {self.id} (paraphrase {i})")
        if self.ar_object_last is not None:
            _check_slots(self.ar_object_last, f"relation {self.id} (ar_object_last)")
            if not self.ar_object_last.rstrip().endswith(OBJECT_SLOT):
                raise CorpusError(f"relation {self.id}: ar_object_last must end with {OBJECT_SLOT}")
        if self.ar_subject_last is not None:
            _check_slots(self.ar_subject_last, f"relation {self.id} (ar_subject_last)")
            if not self.ar_subject_last.rstrip().endswith(SUBJECT_SLOT):
                raise CorpusError(f"relation {self.id}: ar_subject_last must end with {SUBJECT_SLOT}")
        if self.symmetric and self.rel_type is not RelType.N_TO_M:
            raise CorpusError(f"relation {self.id}: symmetric relations must be {RelType.N_TO_M.value}")


@dataclass(frozen=True)
class LoadReport:
    """Counts of what happened while loading a triples file."""

    kept: int = 0
    duplicates_removed: int = 0
    unknown_relation: int = 0


@dataclass(frozen=True)
class Corpus:
    """Relations plus triples grouped by relation id (non-empty groups only)."""

    relations: dict[str, Relation]
    groups: dict[str, tuple[Triple, ...]]
    load_report: LoadReport = LoadReport()
    dropped_relations: tuple[str, ...] = ()

    @property
    def instance_count(self) -> int:
        return sum(len(g) for g in self.groups.values())

    def iter_instances(self) -> Iterator[tuple[Relation, int, Triple]]:
        """Yield (relation, index-within-group, triple) in stable order."""
        for rel_id in sorted(self.groups):
            relation = self.relations[rel_id]
            for idx, triple in enumerate(self.groups[rel_id]):
                yield relation, idx, triple


def relation_to_record(relation: Relation) -> dict:
    record: dict = {
        "relation": relation.id,
        "template": relation.template,
        "type": relation.rel_type.value,
    }
    if relation.symmetric:
        record["symmetric"] = True
    if relation.optimized_template is not None:
        record["template_optimized"] = relation.optimized_template
    if relation.paraphrases:
        record["paraphrases"] = list(relation.paraphrases)
    if relation.ar_object_last is not None:
        record["ar_object_last"] = relation.ar_object_last
    if relation.ar_subject_last is not None:
        record["ar_subject_last"] = relation.ar_subject_last
    return record


def record_to_relation(record: dict, where: str = "<record>") -> Relation:
    try:
        rel_id = str(record["relation"])
        template = str(record["template"])
        rel_type = RelType(str(record["type"]))
    except KeyError as exc:
        raise CorpusError(f"{where}: missing relation key {exc}") from exc
    except ValueError as exc:
        raise CorpusError(f"{where}: {exc}") from exc
    return Relation(
        id=rel_id,
        template=template,
        rel_type=rel_type,
        symmetric=bool(record.get("symmetric", False)),
        optimized_template=record.get("template_optimized"),
        paraphrases=tuple(record.get("paraphrases") or ()),
        ar_object_last=record.get("ar_object_last"),
        ar_subject_last=record.get("ar_subject_last"),
    )


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise CorpusError(f"{path}:{lineno}: expected a JSON object")
        yield lineno, record


def load_relations(relations_path: str | Path) -> dict[str, Relation]:
    """Load a relations JSONL file into an id-keyed mapping."""
    path = Path(relations_path)
    relations: dict[str, Relation] = {}
    for lineno, record in _iter_jsonl(path):
        relation = record_to_relation(record, where=f"{path}:{lineno}")
        if relation.id in relations:
            raise CorpusError(f"{path}:{lineno}: duplicate relation id {relation.id!r}")
        relations[relation.id] = relation
    return relations


def _entity_from(record: dict, key: str, where: str) -> str:
    raw = record.get(key)
    if not isinstance(raw, str) or not raw.strip():
        raise CorpusError(f"{where}: {key} must be a non-empty string")
    value = raw.strip()
    if SUBJECT_SLOT in value or OBJECT_SLOT in value:
        raise CorpusError(f"{where}: entity {value!r} contains a template slot marker")
    return value


def _triple_files(triples_path: Path) -> list[tuple[Path, str | None]]:
    if triples_path.is_dir():
        files = sorted(p for p in triples_path.iterdir() if p.suffix in (".jsonl", ".json"))
        if not files:
            raise CorpusError(f"no triples files found in directory {triples_path}")
        return [(p, p.stem) for p in files]
    return [(triples_path, None)]


def load_corpus(triples_path: str | Path, relations_path: str | Path) -> Corpus:
    """Load and normalize a triple corpus.

    Deduplicates triples on (subject, relation, object) after trimming and
    lowercasing, and rejects triples whose relation is not declared,
    counting both in the load report.
    """
    relations = load_relations(relations_path)
    groups: dict[str, list[Triple]] = {}
    seen: set[tuple[str, str, str]] = set()
    duplicates = 0
    unknown = 0
    for path, implied_relation in _triple_files(Path(triples_path)):
        for lineno, record in _iter_jsonl(path):
            where = f"{path}:{lineno}"
            subject = _entity_from(record, "sub_label", where)
            obj = _entity_from(record, "obj_label", where)
            rel_id = record.get("predicate_id") or implied_relation
            if not rel_id:
                raise CorpusError(f"{where}: no predicate_id and no per-relation file name")
            if rel_id not in relations:
                unknown += 1
                continue
            key = (normalize_entity(subject), rel_id, normalize_entity(obj))
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            evidence = record.get("evidence")
            if evidence is not None and not isinstance(evidence, str):
                raise CorpusError(f"{where}: evidence must be a string when present")
            groups.setdefault(rel_id, []).append(
                Triple(subject=subject, object=obj, relation_id=rel_id, evidence=evidence)
            )
    report = LoadReport(kept=len(seen), duplicates_removed=duplicates, unknown_relation=unknown)
    return Corpus(
        relations=relations,
        groups={rel_id: tuple(ts) for rel_id, ts in groups.items()},
        load_report=report,
    )


def save_corpus(corpus: Corpus, triples_path: str | Path, relations_path: str | Path) -> None:
    """Write a corpus back to its JSONL file forms (stable byte output)."""
    rel_lines = [json.dumps(relation_to_record(r), sort_keys=True) for r in corpus.relations.values()]
    Path(relations_path).write_text("\n".join(rel_lines) + "\n" if rel_lines else "", encoding="utf-8")
    triple_lines = []
    for rel_id in corpus.groups:
        for t in corpus.groups[rel_id]:
            record: dict = {"sub_label": t.subject, "obj_label": t.object, "predicate_id": t.relation_id}
            if t.evidence is not None:
                record["evidence"] = t.evidence
            triple_lines.append(json.dumps(record, sort_keys=True))
    Path(triples_path).write_text("\n".join(triple_lines) + "\n" if triple_lines else "", encoding="utf-8")


@dataclass(frozen=True)
class AnswerIndex:
    """Filtered-setting lookup of every entity the corpus marks correct.

    ``by_object`` maps (relation, normalized object) to the subjects holding
    that object; ``by_subject`` mirrors it for objects per subject.
    """

    by_object: dict[tuple[str, str], frozenset[str]]
    by_subject: dict[tuple[str, str], frozenset[str]]


def build_answer_index(corpus: Corpus) -> AnswerIndex:
    by_object: dict[tuple[str, str], set[str]] = {}
    by_subject: dict[tuple[str, str], set[str]] = {}
    for group in corpus.groups.values():
        for t in group:
            by_object.setdefault((t.relation_id, normalize_entity(t.object)), set()).add(t.subject)
            by_subject.setdefault((t.relation_id, normalize_entity(t.subject)), set()).add(t.object)
    return AnswerIndex(
        by_object={k: frozenset(v) for k, v in by_object.items()},
        by_subject={k: frozenset(v) for k, v in by_subject.items()},
    )


def exclusions(
    index: AnswerIndex,
    relation_id: str,
    query_entity: str,
    direction: Direction,
    keep: str,
) -> frozenset[str]:
    """Entities to ban before the second prediction, keeping the ground truth.

    For PREDICT_SUBJECT the query entity sits in the object slot, so the
    correct answers come from ``by_object``; PREDICT_OBJECT mirrors this.
    Unseen query entities yield the empty set.
    """
    table = index.by_object if direction is Direction.PREDICT_SUBJECT else index.by_subject
    found = table.get((relation_id, normalize_entity(query_entity)), frozenset())
    keep_norm = normalize_entity(keep)
    return frozenset(e for e in found if normalize_entity(e) != keep_norm)


class EntityFilter:
    """Reusable entity acceptance test.

    Backed either by a live token-counting backend or by a materialized
    entity table loaded from disk, so a filter derived from one backend can
    be applied when evaluating another.
    """

    def __init__(
        self,
        decide: Callable[[str], bool] | None = None,
        table: dict[str, bool] | None = None,
        source: str = "",
    ) -> None:
        self._decide = decide
        self._table: dict[str, bool] = dict(table or {})
        self.source = source

    def __call__(self, entity: str) -> bool:
        if entity in self._table:
            return self._table[entity]
        if self._decide is None:
            raise CorpusError(f"entity filter from {self.source or 'file'} has no verdict for {entity!r}")
        verdict = bool(self._decide(entity))
        self._table[entity] = verdict
        return verdict

    def materialize(self, entities: Iterable[str]) -> "EntityFilter":
        """Evaluate and freeze verdicts for the given entities."""
        for entity in entities:
            self(entity)
        return self

    def save(self, path: str | Path) -> None:
        lines = [
            json.dumps({"entity": entity, "keep": keep}, sort_keys=True)
            for entity, keep in sorted(self._table.items())
        ]
        Path(path).write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "EntityFilter":
        table: dict[str, bool] = {}
        for lineno, record in _iter_jsonl(Path(path)):
            if "entity" not in record or "keep" not in record:
                raise CorpusError(f"{path}:{lineno}: filter lines need 'entity' and 'keep'")
            table[str(record["entity"])] = bool(record["keep"])
        return cls(table=table, source=str(path))

    @property
    def table(self) -> dict[str, bool]:
        return dict(self._table)


def export_filter(backend, max_tokens: int = 1) -> EntityFilter:
    """Build an acceptance test from a backend's tokenizer.

    The returned filter caches verdicts and can be materialized and saved so
    it can later be applied to runs against a different backend.
    """

    def decide(entity: str) -> bool:
        try:
            return backend.token_count(entity) <= max_tokens
        except CoherevalError:
            raise
        except Exception as exc:  # backend transport failures carry the entity name
            raise CorpusError(f"token counting failed for entity {entity!r}: {exc}") from exc

    return EntityFilter(decide=decide, source=f"token_count<={max_tokens}")


def apply_entity_filter(corpus: Corpus, keep: Callable[[str], bool]) -> Corpus:
    """Keep only triples where both subject and object pass the predicate.

    Relations left with zero triples are dropped from the evaluated groups
    and recorded in ``dropped_relations`` so they stay out of macro scores.
    """
    groups: dict[str, tuple[Triple, ...]] = {}
    dropped: list[str] = []
    for rel_id, triples in corpus.groups.items():
        kept = []
        for t in triples:
            try:
                ok = keep(t.subject) and keep(t.object)
            except CorpusError:
                raise
            except Exception as exc:
                raise CorpusError(f"entity filter failed on {t.subject!r}/{t.object!r}: {exc}") from exc
            if ok:
                kept.append(t)
        if kept:
            groups[rel_id] = tuple(kept)
        else:
            dropped.append(rel_id)
    return replace(corpus, groups=groups, dropped_relations=corpus.dropped_relations + tuple(dropped))
