"""Deterministic synthetic knowledge-base backend and corpus generator.

The synthetic backend answers rendered prompts by inverting the known cloze
templates with regular expressions, then consulting a generated fact table.
Its answer policy is configurable so runs can be verified against exact or
Monte-Carlo expectations:

- ``perfect``: both query directions answered from facts, ties broken by
  fixed entity ordering (which is what makes the top answer order-biased on
  fan-in relations when exclusion is disabled).
- ``reversal_cursed``: object queries answered from facts, subject queries
  drawn uniformly from the non-banned subject pool.
- ``echo``: object queries answered from facts, subject queries answered by
  repeating the entity already in the prompt. This reproduces the failure
  where the reversed query just parrots its pivot.
- ``fixed_answer``: one configured entity for every query.
- ``uniform_random``: uniform draw from the non-banned pool per direction.

All randomness derives from (seed, request fingerprint), so a backend with a
fixed seed is a pure function of each request and concurrency cannot change
results.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from ..corpus import (
    Corpus,
    CorpusError,
    LoadReport,
    Relation,
    Triple,
    normalize_entity,
    record_to_relation,
    relation_to_record,
)
from ..prompting import RenderedPrompt
from ..types import OBJECT_SLOT, SUBJECT_SLOT, CoherevalError, Direction, RelType
from .base import BackendCapabilities, BackendKind, Prediction, predictions_from_wire

SYNTHETIC_CAPABILITIES = BackendCapabilities(
    kind=BackendKind.MASKED,
    mask_marker="[MASK]",
    single_token_only=False,
    max_n_best=10,
    supports_banning=True,
)

_BEHAVIOR_KINDS = ("perfect", "reversal_cursed", "echo", "fixed_answer", "uniform_random")


class SyntheticError(CoherevalError):
    """Infeasible generator configuration or malformed knowledge-base file."""


@dataclass(frozen=True)
class Behavior:
    """Answer policy of a synthetic backend."""

    kind: str
    fixed_answer: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in _BEHAVIOR_KINDS:
            raise SyntheticError(f"unknown behavior {self.kind!r}, expected one of {_BEHAVIOR_KINDS}")
        if self.kind == "fixed_answer" and not self.fixed_answer:
            raise SyntheticError("fixed_answer behavior needs an entity")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "fixed_answer": self.fixed_answer}

    @classmethod
    def parse(cls, value) -> "Behavior":
        if isinstance(value, Behavior):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        if isinstance(value, dict):
            return cls(kind=value.get("kind", ""), fixed_answer=value.get("fixed_answer"))
        raise SyntheticError(f"cannot parse behavior from {value!r}")


PERFECT = Behavior("perfect")
REVERSAL_CURSED = Behavior("reversal_cursed")
ECHO = Behavior("echo")
UNIFORM_RANDOM = Behavior("uniform_random")


def fixed_answer(entity: str) -> Behavior:
    return Behavior("fixed_answer", entity)


@dataclass(frozen=True)
class RelationSpec:
    """One relation to generate."""

    id: str
    rel_type: RelType
    instances: int
    symmetric: bool = False
    fan_in: int = 5
    fan_out: int = 2
    paraphrases: int = 2
    with_optimized: bool = True
    with_ar: bool = True


@dataclass(frozen=True)
class SyntheticKBConfig:
    seed: int
    behavior: Behavior
    relations: tuple[RelationSpec, ...]
    subject_pool_extra: int = 0
    object_pool_extra: int = 0
    with_evidence: bool = False

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SyntheticKBConfig":
        behavior = Behavior.parse(payload.get("behavior", "perfect"))
        if behavior.kind == "fixed_answer" and behavior.fixed_answer is None:
            behavior = fixed_answer(payload.get("fixed_answer", ""))
        specs = []
        for record in payload.get("relations", []):
            try:
                specs.append(
                    RelationSpec(
                        id=str(record["id"]),
                        rel_type=RelType(str(record["type"])),
                        instances=int(record["instances"]),
                        symmetric=bool(record.get("symmetric", False)),
                        fan_in=int(record.get("fan_in", 5)),
                        fan_out=int(record.get("fan_out", 2)),
                        paraphrases=int(record.get("paraphrases", 2)),
                        with_optimized=bool(record.get("with_optimized", True)),
                        with_ar=bool(record.get("with_ar", True)),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise SyntheticError(f"bad relation spec {record!r}: {exc}") from exc
        if not specs:
            raise SyntheticError("synthetic config needs at least one relation")
        return cls(
            seed=int(payload.get("seed", 0)),
            behavior=behavior,
            relations=tuple(specs),
            subject_pool_extra=int(payload.get("subject_pool_extra", 0)),
            object_pool_extra=int(payload.get("object_pool_extra", 0)),
            with_evidence=bool(payload.get("with_evidence", False)),
        )


@dataclass
class SyntheticKB:
    """Facts, pools, and the answer policy behind a synthetic backend."""

    relations: dict[str, Relation]
    facts: tuple[Triple, ...]
    behavior: Behavior
    seed: int
    subject_pools: dict[str, tuple[str, ...]]
    object_pools: dict[str, tuple[str, ...]]
    forward: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)
    backward: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.forward or not self.backward:
            fwd: dict[tuple[str, str], set[str]] = {}
            bwd: dict[tuple[str, str], set[str]] = {}
            for t in self.facts:
                fwd.setdefault((t.relation_id, normalize_entity(t.subject)), set()).add(t.object)
                bwd.setdefault((t.relation_id, normalize_entity(t.object)), set()).add(t.subject)
            self.forward = {k: tuple(sorted(v)) for k, v in fwd.items()}
            self.backward = {k: tuple(sorted(v)) for k, v in bwd.items()}

    def objects_of(self, relation_id: str, subject: str) -> tuple[str, ...]:
        return self.forward.get((relation_id, normalize_entity(subject)), ())

    def subjects_of(self, relation_id: str, obj: str) -> tuple[str, ...]:
        return self.backward.get((relation_id, normalize_entity(obj)), ())

    def pool(self, relation_id: str, direction: Direction) -> tuple[str, ...]:
        pools = self.subject_pools if direction is Direction.PREDICT_SUBJECT else self.object_pools
        return pools.get(relation_id, ())

    def to_corpus(self) -> Corpus:
        groups: dict[str, list[Triple]] = {}
        for t in self.facts:
            groups.setdefault(t.relation_id, []).append(t)
        return Corpus(
            relations=dict(self.relations),
            groups={k: tuple(v) for k, v in groups.items()},
            load_report=LoadReport(kept=len(self.facts)),
        )

    def to_json_dict(self) -> dict:
        return {
            "format": "cohereval-synthetic-kb",
            "version": 1,
            "seed": self.seed,
            "behavior": self.behavior.to_json_dict(),
            "relations": [relation_to_record(r) for r in self.relations.values()],
            "facts": [[t.subject, t.object, t.relation_id, t.evidence] for t in self.facts],
            "subject_pools": {k: list(v) for k, v in self.subject_pools.items()},
            "object_pools": {k: list(v) for k, v in self.object_pools.items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SyntheticKB":
        if payload.get("format") != "cohereval-synthetic-kb":
            raise SyntheticError("not a synthetic knowledge-base file")
        try:
            relations = {}
            for record in payload["relations"]:
                relation = record_to_relation(record, where="kb file")
                relations[relation.id] = relation
            facts = tuple(
                Triple(subject=s, object=o, relation_id=r, evidence=e) for s, o, r, e in payload["facts"]
            )
            return cls(
                relations=relations,
                facts=facts,
                behavior=Behavior.parse(payload["behavior"]),
                seed=int(payload["seed"]),
                subject_pools={k: tuple(v) for k, v in payload["subject_pools"].items()},
                object_pools={k: tuple(v) for k, v in payload["object_pools"].items()},
            )
        except (KeyError, TypeError, ValueError, CorpusError) as exc:
            raise SyntheticError(f"malformed knowledge-base file: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticKB":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SyntheticError(f"cannot load knowledge base {path}: {exc}") from exc
        return cls.from_json_dict(payload)


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _entity_names(rel_id: str, tag: str, count: int) -> list[str]:
    return [f"{rel_id}_{tag}{i:05d}" for i in range(count)]


def _generate_pairs(spec: RelationSpec, rng: random.Random) -> tuple[list[tuple[str, str]], list[str], list[str]]:
    """Return (subject, object) pairs plus the full per-slot name pools."""
    n = spec.instances
    if n < 1:
        raise SyntheticError(f"relation {spec.id}: instances must be positive")
    if spec.symmetric:
        if n % 2:
            raise SyntheticError(f"relation {spec.id}: symmetric relations need an even instance count")
        n_pairs = n // 2
        pool = _entity_names(spec.id, "e", max(3, n_pairs))
        chosen: set[frozenset[str]] = set()
        pairs: list[tuple[str, str]] = []
        attempts = 0
        while len(pairs) < n_pairs:
            attempts += 1
            if attempts > 10000 * max(1, n_pairs):
                raise SyntheticError(f"relation {spec.id}: cannot place {n_pairs} distinct symmetric pairs")
            a, b = rng.sample(pool, 2)
            key = frozenset((a, b))
            if key in chosen:
                continue
            chosen.add(key)
            pairs.append((a, b))
        both = [p for ab in pairs for p in (ab, (ab[1], ab[0]))]
        return both, pool, pool
    if spec.rel_type is RelType.ONE_TO_ONE:
        subjects = _entity_names(spec.id, "s", n)
        objects = _entity_names(spec.id, "o", n)
        perm = list(range(n))
        rng.shuffle(perm)
        return [(subjects[i], objects[perm[i]]) for i in range(n)], subjects, objects
    if spec.rel_type is RelType.N_TO_ONE:
        if spec.fan_in < 2:
            raise SyntheticError(f"relation {spec.id}: N-1 needs fan_in >= 2")
        if n % spec.fan_in:
            raise SyntheticError(f"relation {spec.id}: instances must be a multiple of fan_in")
        subjects = _entity_names(spec.id, "s", n)
        objects = _entity_names(spec.id, "o", n // spec.fan_in)
        return [(subjects[i], objects[i // spec.fan_in]) for i in range(n)], subjects, objects
    # N-M: every subject holds fan_out objects; the pool is small enough that
    # object sharing is forced by pigeonhole.
    if spec.fan_out < 2:
        raise SyntheticError(f"relation {spec.id}: N-M needs fan_out >= 2")
    if n % spec.fan_out:
        raise SyntheticError(f"relation {spec.id}: instances must be a multiple of fan_out")
    n_subj = n // spec.fan_out
    n_obj = max(2, (n_subj * spec.fan_out) // 2)
    if n_obj < spec.fan_out:
        raise SyntheticError(f"relation {spec.id}: object pool too small for fan_out {spec.fan_out}")
    subjects = _entity_names(spec.id, "s", n_subj)
    objects = _entity_names(spec.id, "o", n_obj)
    pairs = []
    for s in subjects:
        for o in rng.sample(objects, spec.fan_out):
            pairs.append((s, o))
    return pairs, subjects, objects


def _relation_for(spec: RelationSpec) -> Relation:
    rid = spec.id
    return Relation(
        id=rid,
        template=f"the {rid} partner of [X] is [Y].",
        rel_type=spec.rel_type,
        symmetric=spec.symmetric,
        optimized_template=f"by the tuned {rid} probe [X] maps to [Y]." if spec.with_optimized else None,
        paraphrases=tuple(
            f"under {rid} paraphrase {j} [X] pairs with [Y]." for j in range(spec.paraphrases)
        ),
        ar_object_last=f"the {rid} partner of [X] is [Y]" if spec.with_ar else None,
        ar_subject_last=f"the {rid} origin of [Y] is [X]" if spec.with_ar else None,
    )


def generate_synthetic(config: SyntheticKBConfig) -> tuple[SyntheticKB, Corpus]:
    """Generate a knowledge base plus loadable corpus, fully seed-determined."""
    ids = [spec.id for spec in config.relations]
    if len(set(ids)) != len(ids):
        raise SyntheticError("relation ids must be unique")
    relations: dict[str, Relation] = {}
    facts: list[Triple] = []
    subject_pools: dict[str, tuple[str, ...]] = {}
    object_pools: dict[str, tuple[str, ...]] = {}
    for spec in config.relations:
        rng = random.Random(_derive_seed(config.seed, spec.id))
        relation = _relation_for(spec)
        relations[spec.id] = relation
        pairs, subjects, objects = _generate_pairs(spec, rng)
        for s, o in pairs:
            evidence = None
            if config.with_evidence:
                evidence = f"public records link {s} with {o} through {spec.id}."
            facts.append(Triple(subject=s, object=o, relation_id=spec.id, evidence=evidence))
        extra_s = _entity_names(spec.id, "s", len(subjects) + config.subject_pool_extra)[len(subjects):]
        extra_o = _entity_names(spec.id, "o", len(objects) + config.object_pool_extra)[len(objects):]
        subject_pools[spec.id] = tuple(sorted(set(subjects))) + tuple(extra_s)
        object_pools[spec.id] = tuple(sorted(set(objects))) + tuple(extra_o)
    kb = SyntheticKB(
        relations=relations,
        facts=tuple(facts),
        behavior=config.behavior,
        seed=config.seed,
        subject_pools=subject_pools,
        object_pools=object_pools,
    )
    return kb, kb.to_corpus()


_MASK_SENTINEL = "\x00MASK\x00"


@dataclass(frozen=True)
class _PatternEntry:
    relation_id: str
    direction: Direction
    pattern: str
    prefilter: str


class _TemplateMatcher:
    """Inverts rendered prompts back to (relation, direction, known entity).

    Patterns are tried in a fixed order (relations sorted by id, template
    variants in declaration order, object direction first), so matching is
    deterministic. Prompts that match no known template yield None; the
    backend then answers with an empty n-best list.
    """

    def __init__(self, relations: dict[str, Relation]) -> None:
        self._masked: list[_PatternEntry] = []
        self._prefix: list[_PatternEntry] = []
        self._compiled: dict[str, list[tuple[_PatternEntry, re.Pattern[str]]]] = {}
        for rel_id in sorted(relations):
            relation = relations[rel_id]
            variants = [relation.template]
            if relation.optimized_template:
                variants.append(relation.optimized_template)
            variants.extend(relation.paraphrases)
            for template in variants:
                for direction in (Direction.PREDICT_OBJECT, Direction.PREDICT_SUBJECT):
                    self._masked.append(self._masked_entry(rel_id, template, direction))
            if relation.ar_object_last:
                self._prefix.append(self._prefix_entry(rel_id, relation.ar_object_last, Direction.PREDICT_OBJECT))
            if relation.ar_subject_last:
                self._prefix.append(self._prefix_entry(rel_id, relation.ar_subject_last, Direction.PREDICT_SUBJECT))

    @staticmethod
    def _literal(template: str) -> str:
        segments = template.replace(SUBJECT_SLOT, "\x00").replace(OBJECT_SLOT, "\x00").split("\x00")
        longest = max((s.strip() for s in segments), key=len, default="")
        return longest if len(longest) >= 4 else ""

    def _masked_entry(self, rel_id: str, template: str, direction: Direction) -> _PatternEntry:
        known_slot = SUBJECT_SLOT if direction is Direction.PREDICT_OBJECT else OBJECT_SLOT
        unknown_slot = OBJECT_SLOT if direction is Direction.PREDICT_OBJECT else SUBJECT_SLOT
        pattern = re.escape(template)
        pattern = pattern.replace(re.escape(known_slot), r"(?P<known>.+?)")
        pattern = pattern.replace(re.escape(unknown_slot), _MASK_SENTINEL)
        return _PatternEntry(rel_id, direction, pattern, self._literal(template))

    def _prefix_entry(self, rel_id: str, template: str, direction: Direction) -> _PatternEntry:
        unknown_slot = OBJECT_SLOT if direction is Direction.PREDICT_OBJECT else SUBJECT_SLOT
        known_slot = SUBJECT_SLOT if direction is Direction.PREDICT_OBJECT else OBJECT_SLOT
        prefix = template[: template.rfind(unknown_slot)].rstrip()
        pattern = re.escape(prefix).replace(re.escape(known_slot), r"(?P<known>.+?)") + r"$"
        return _PatternEntry(rel_id, direction, pattern, self._literal(prefix))

    def _masked_compiled(self, mask_marker: str) -> list[tuple[_PatternEntry, re.Pattern[str]]]:
        cached = self._compiled.get(mask_marker)
        if cached is None:
            cached = [
                (entry, re.compile(entry.pattern.replace(_MASK_SENTINEL, re.escape(mask_marker))))
                for entry in self._masked
            ]
            self._compiled[mask_marker] = cached
        return cached

    def parse(self, text: str, mask_marker: str) -> tuple[str, Direction, str] | None:
        if not mask_marker:
            return None
        for entry, compiled in self._masked_compiled(mask_marker):
            if entry.prefilter and entry.prefilter not in text:
                continue
            found = compiled.search(text)
            if found:
                return entry.relation_id, entry.direction, found.group("known").strip()
        return None

    def parse_prefix(self, text: str) -> tuple[str, Direction, str] | None:
        stripped = text.rstrip()
        for entry in self._prefix:
            if entry.prefilter and entry.prefilter not in stripped:
                continue
            found = re.search(entry.pattern, stripped)
            if found:
                return entry.relation_id, entry.direction, found.group("known").strip()
        return None


class SyntheticBackend:
    """In-process backend over a synthetic knowledge base.

    Also exposes the wire-shaped text-level calls the reference server
    forwards to, so the in-process and HTTP paths share one answer engine.
    """

    def __init__(self, kb: SyntheticKB) -> None:
        self.kb = kb
        self._matcher = _TemplateMatcher(kb.relations)

    # -- Backend protocol -------------------------------------------------

    def capabilities(self) -> BackendCapabilities:
        return SYNTHETIC_CAPABILITIES

    def predict(self, prompt: RenderedPrompt, banned: frozenset[str], n_best: int) -> list[Prediction]:
        items = self.predict_text(prompt.text, prompt.slot_marker, n_best, sorted(banned))
        return predictions_from_wire(items, banned)

    def score_candidates(self, prompt: RenderedPrompt, candidates: Sequence[str]) -> list[tuple[str, float]]:
        scores = self.score_text(prompt.text, list(candidates))
        return list(zip(candidates, scores))

    def token_count(self, entity: str) -> int:
        return self.token_count_text(entity)

    # -- wire-shaped calls -------------------------------------------------

    def predict_text(self, text: str, mask_marker: str, n_best: int, banned: Sequence[str]) -> list[dict]:
        if n_best < 1 or n_best > SYNTHETIC_CAPABILITIES.max_n_best:
            raise SyntheticError(f"n_best must be within 1..{SYNTHETIC_CAPABILITIES.max_n_best}")
        match = self._matcher.parse(text, mask_marker)
        if match is None:
            return []
        rel_id, direction, known = match
        banned_norm = {normalize_entity(b) for b in banned}
        behavior = self.kb.behavior
        if behavior.kind == "fixed_answer":
            answers = [behavior.fixed_answer or ""]
        elif behavior.kind == "echo" and direction is Direction.PREDICT_SUBJECT:
            answers = [known]
        elif direction is Direction.PREDICT_OBJECT and behavior.kind in ("perfect", "reversal_cursed", "echo"):
            answers = list(self.kb.objects_of(rel_id, known))
        elif direction is Direction.PREDICT_SUBJECT and behavior.kind == "perfect":
            answers = list(self.kb.subjects_of(rel_id, known))
        else:
            pool = self.kb.pool(rel_id, direction)
            live = [e for e in pool if normalize_entity(e) not in banned_norm]
            if not live:
                return []
            rng = self._request_rng("predict", text, mask_marker, "\x1e".join(sorted(banned_norm)), n_best)
            answers = [rng.choice(live)]
        survivors = [a for a in answers if a and normalize_entity(a) not in banned_norm]
        return [{"text": a, "score": float(-i)} for i, a in enumerate(survivors[:n_best])]

    def score_text(self, prompt_prefix: str, candidates: Sequence[str]) -> list[float]:
        if not candidates:
            raise SyntheticError("candidates must be non-empty")
        match = self._matcher.parse_prefix(prompt_prefix)
        if match is None:
            return [0.0] * len(candidates)
        rel_id, direction, known = match
        behavior = self.kb.behavior
        if behavior.kind == "uniform_random" or (
            behavior.kind == "reversal_cursed" and direction is Direction.PREDICT_SUBJECT
        ):
            rng = self._request_rng("score", prompt_prefix, "\x1e".join(candidates))
            return [rng.random() - 1.0 for _ in candidates]
        if behavior.kind == "fixed_answer":
            targets = {normalize_entity(behavior.fixed_answer or "")}
        elif behavior.kind == "echo" and direction is Direction.PREDICT_SUBJECT:
            targets = {normalize_entity(known)}
        elif direction is Direction.PREDICT_OBJECT:
            targets = {normalize_entity(o) for o in self.kb.objects_of(rel_id, known)}
        else:
            targets = {normalize_entity(s) for s in self.kb.subjects_of(rel_id, known)}
        return [0.0 if normalize_entity(c) in targets else -1.0 for c in candidates]

    def token_count_text(self, text: str) -> int:
        # Reference tokenizer: whitespace-separated words.
        return len(text.split())

    def _request_rng(self, *parts) -> random.Random:
        return random.Random(_derive_seed(self.kb.seed, *parts))
