"""Two-round coherency evaluation over a pluggable inference backend.

Per instance, round 1 predicts the object from the subject, bans every other
known-correct subject for the predicted pivot, asks for the subject back,
and scores a partial match against the gold subject. Round 2 mirrors the
procedure starting from the object. Per-relation means are macro-averaged
without weighting, and all means are kept as exact rationals until they are
formatted.
"""
from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

from .backends.base import Backend, BackendCapabilities, BackendKind
from .corpus import AnswerIndex, Corpus, Relation, Triple, build_answer_index, exclusions, normalize_entity
from .prompting import (
    AUTOREGRESSIVE,
    MANUAL,
    Placement,
    PromptMode,
    attach_evidence,
    paraphrase,
    render,
    sample_paraphrase_index,
)
from .types import CoherevalError, Direction, RelType


class EngineError(CoherevalError):
    """Invalid evaluation request."""


class EmptyRunError(EngineError):
    """Nothing was evaluable: reported as an error, never as NaN scores."""


# --------------------------------------------------------------------------
# Matching and formatting
# --------------------------------------------------------------------------


def _normalize_for_match(text: str) -> str:
    text = text.strip()
    if text.endswith("."):
        text = text[:-1]
    return text.strip().lower()


def partial_match(a: str, b: str) -> bool:
    """Case-insensitive mutual containment; empty strings never match.

    Both sides are trimmed and lose at most one trailing period first, so
    generative backends may emit sentence-final punctuation without their
    adapters having to normalize.
    """
    na, nb = _normalize_for_match(a), _normalize_for_match(b)
    if not na or not nb:
        return False
    return na in nb or nb in na


def format_percent(value: Fraction) -> str:
    """Render a [0, 1] fraction as a percentage, 2 decimals, half-up."""
    scaled = value * 10000  # hundredths of a percent
    q, r = divmod(scaled.numerator, scaled.denominator)
    if 2 * r >= scaled.denominator:
        q += 1
    return f"{q // 100}.{q % 100:02d}"


def _mean(values: list[Fraction]) -> Fraction:
    if not values:
        raise EngineError("cannot average an empty list of relation scores")
    return sum(values, start=Fraction(0)) / len(values)


# --------------------------------------------------------------------------
# Options and result records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalOptions:
    """Everything that changes what a run computes (and so its fingerprint)."""

    n_best: int = 10
    exclusion_enabled: bool = True
    exclusion_keying: str = "pivot"  # "pivot" keys bans by the predicted entity, "gold" by the ground truth
    evidence: bool = False
    evidence_placement: Placement = Placement.AFTER
    candidate_scope: str = "relation"  # "relation" or "corpus" candidate sets for entity-last scoring
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.exclusion_keying not in ("pivot", "gold"):
            raise EngineError(f"unknown exclusion keying {self.exclusion_keying!r}")
        if self.candidate_scope not in ("relation", "corpus"):
            raise EngineError(f"unknown candidate scope {self.candidate_scope!r}")
        if self.n_best < 1:
            raise EngineError("n_best must be at least 1")
        if self.parallelism < 1:
            raise EngineError("parallelism must be at least 1")


@dataclass(frozen=True)
class StepRecord:
    """Audit record of one model query."""

    prompt: str
    prediction: str | None
    rank: int | None
    score: float | None
    banned_count: int
    no_prediction: bool


STEP_NAMES = (
    "round1_predict_object",
    "round1_predict_subject",
    "round2_predict_subject",
    "round2_predict_object",
)

_SKIPPED_STEP = StepRecord(prompt="", prediction=None, rank=None, score=None, banned_count=0, no_prediction=True)


@dataclass(frozen=True)
class InstanceResult:
    """Per-triple audit record with both coherency and correctness bits."""

    relation_id: str
    triple_index: int
    subject: str
    object: str
    round1_coherent: int
    round2_coherent: int
    c1: int
    c2: int
    all_correct: int
    steps: tuple[StepRecord, StepRecord, StepRecord, StepRecord]


@dataclass(frozen=True)
class RelationScore:
    relation_id: str
    rel_type: RelType
    symmetric: bool
    instances: int
    round1_hits: int
    round2_hits: int
    c1_hits: int
    c2_hits: int
    all_correct_hits: int

    def _frac(self, hits: int) -> Fraction:
        return Fraction(hits, self.instances)

    @property
    def round1(self) -> Fraction:
        return self._frac(self.round1_hits)

    @property
    def round2(self) -> Fraction:
        return self._frac(self.round2_hits)

    @property
    def avg(self) -> Fraction:
        return (self.round1 + self.round2) / 2

    @property
    def c1(self) -> Fraction:
        return self._frac(self.c1_hits)

    @property
    def c2(self) -> Fraction:
        return self._frac(self.c2_hits)

    @property
    def all_correct(self) -> Fraction:
        return self._frac(self.all_correct_hits)


@dataclass(frozen=True)
class TypeAggregate:
    relations: int
    instances: int
    round1: Fraction | None
    round2: Fraction | None
    avg: Fraction | None


# Aggregation keys: the three cardinality classes partition the relations,
# symmetric ones are counted inside N-M and reported separately as well.
TYPE_KEYS = ("1-1", "N-1", "N-M", "symmetric", "All")


@dataclass(frozen=True)
class CoherencyReport:
    relation_scores: tuple[RelationScore, ...]
    skipped_relations: tuple[tuple[str, str], ...] = ()
    skipped_instances: int = 0

    @property
    def total_instances(self) -> int:
        return sum(r.instances for r in self.relation_scores)

    @property
    def macro_round1(self) -> Fraction:
        return _mean([r.round1 for r in self.relation_scores])

    @property
    def macro_round2(self) -> Fraction:
        return _mean([r.round2 for r in self.relation_scores])

    @property
    def macro_avg(self) -> Fraction:
        return _mean([r.avg for r in self.relation_scores])

    @property
    def macro_c1(self) -> Fraction:
        return _mean([r.c1 for r in self.relation_scores])

    @property
    def macro_c2(self) -> Fraction:
        return _mean([r.c2 for r in self.relation_scores])

    @property
    def macro_all_correct(self) -> Fraction:
        return _mean([r.all_correct for r in self.relation_scores])

    def per_type(self) -> dict[str, TypeAggregate]:
        def bucket(scores: list[RelationScore]) -> TypeAggregate:
            if not scores:
                return TypeAggregate(0, 0, None, None, None)
            return TypeAggregate(
                relations=len(scores),
                instances=sum(s.instances for s in scores),
                round1=_mean([s.round1 for s in scores]),
                round2=_mean([s.round2 for s in scores]),
                avg=_mean([s.avg for s in scores]),
            )

        out: dict[str, TypeAggregate] = {}
        for key in TYPE_KEYS:
            if key == "All":
                members = list(self.relation_scores)
            elif key == "symmetric":
                members = [s for s in self.relation_scores if s.symmetric]
            else:
                members = [s for s in self.relation_scores if s.rel_type.value == key]
            out[key] = bucket(members)
        return out


@dataclass(frozen=True)
class EvaluationRun:
    report: CoherencyReport
    results: tuple[InstanceResult, ...]


# --------------------------------------------------------------------------
# Instance evaluation
# --------------------------------------------------------------------------


class _CandidatePool:
    """Entity candidate sets for entity-last scoring, derived from the index."""

    def __init__(self, index: AnswerIndex, scope: str) -> None:
        self._index = index
        self._scope = scope
        self._cache: dict[tuple[str, Direction], tuple[str, ...]] = {}

    def get(self, relation_id: str, direction: Direction) -> tuple[str, ...]:
        key = (relation_id, direction)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        entities: set[str] = set()
        if self._scope == "corpus":
            for table in (self._index.by_subject, self._index.by_object):
                for values in table.values():
                    entities.update(values)
        else:
            # Entities occupying the predicted slot within this relation:
            # by_subject values are objects, by_object values are subjects.
            table = self._index.by_subject if direction is Direction.PREDICT_OBJECT else self._index.by_object
            for (rel, _), values in table.items():
                if rel == relation_id:
                    entities.update(values)
        result = tuple(sorted(entities))
        self._cache[key] = result
        return result


def _query(
    backend: Backend,
    caps: BackendCapabilities,
    relation: Relation,
    known: str,
    direction: Direction,
    banned: frozenset[str],
    mode: PromptMode,
    options: EvalOptions,
    evidence: str | None,
    pool: _CandidatePool,
) -> StepRecord:
    if mode.kind == "autoregressive":
        prompt = render(relation, known, direction, "", mode)
        if evidence:
            prompt = attach_evidence(prompt, evidence, Placement.BEFORE)
        banned_norm = {normalize_entity(b) for b in banned}
        candidates = [c for c in pool.get(relation.id, direction) if normalize_entity(c) not in banned_norm]
        if not candidates:
            return StepRecord(prompt.text, None, None, None, len(banned), True)
        scored = backend.score_candidates(prompt, candidates)
        best_idx = 0
        for i, (_, score) in enumerate(scored):
            if score > scored[best_idx][1]:
                best_idx = i
        text, score = scored[best_idx]
        return StepRecord(prompt.text, text, 1, score, len(banned), False)

    prompt = render(relation, known, direction, caps.mask_marker, mode)
    if evidence:
        prompt = attach_evidence(prompt, evidence, options.evidence_placement)
    predictions = backend.predict(prompt, banned, options.n_best)
    if not predictions:
        return StepRecord(prompt.text, None, None, None, len(banned), True)
    top = predictions[0]
    return StepRecord(prompt.text, top.text, top.rank, top.score, len(banned), False)


def evaluate_instance(
    backend: Backend,
    relation: Relation,
    triple: Triple,
    index: AnswerIndex,
    mode: PromptMode = MANUAL,
    options: EvalOptions = EvalOptions(),
    *,
    triple_index: int = 0,
    caps: BackendCapabilities | None = None,
    pool: _CandidatePool | None = None,
) -> InstanceResult:
    """Run both rounds for one triple and derive all five bits.

    The second query of each round bans every entity the index marks correct
    for the pivot except the ground truth; with pivot keying the ban set is
    looked up under the model's predicted entity, with gold keying under the
    ground-truth counterpart.
    """
    caps = caps or backend.capabilities()
    pool = pool or _CandidatePool(index, options.candidate_scope)
    evidence = triple.evidence if options.evidence else None

    def second(pivot: str | None, direction: Direction, gold_pivot: str, keep: str) -> StepRecord:
        if pivot is None:
            return _SKIPPED_STEP
        banned: frozenset[str] = frozenset()
        if options.exclusion_enabled:
            key_entity = pivot if options.exclusion_keying == "pivot" else gold_pivot
            banned = exclusions(index, relation.id, key_entity, direction, keep=keep)
        return _query(backend, caps, relation, pivot, direction, banned, mode, options, evidence, pool)

    # round 1: object first, then recover the subject
    r1_obj = _query(
        backend, caps, relation, triple.subject, Direction.PREDICT_OBJECT, frozenset(), mode, options, evidence, pool
    )
    r1_subj = second(r1_obj.prediction, Direction.PREDICT_SUBJECT, gold_pivot=triple.object, keep=triple.subject)
    round1 = int(partial_match(r1_subj.prediction or "", triple.subject))

    # round 2: subject first, then recover the object
    r2_subj = _query(
        backend, caps, relation, triple.object, Direction.PREDICT_SUBJECT, frozenset(), mode, options, evidence, pool
    )
    r2_obj = second(r2_subj.prediction, Direction.PREDICT_OBJECT, gold_pivot=triple.subject, keep=triple.object)
    round2 = int(partial_match(r2_obj.prediction or "", triple.object))

    c1 = int(partial_match(r1_obj.prediction or "", triple.object))
    c2 = int(partial_match(r2_subj.prediction or "", triple.subject))
    # round1/round2 already compare the remaining two steps against gold, so
    # the conjunction of all four step-level matches is exactly this:
    all_correct = c1 & c2 & round1 & round2

    return InstanceResult(
        relation_id=relation.id,
        triple_index=triple_index,
        subject=triple.subject,
        object=triple.object,
        round1_coherent=round1,
        round2_coherent=round2,
        c1=c1,
        c2=c2,
        all_correct=all_correct,
        steps=(r1_obj, r1_subj, r2_subj, r2_obj),
    )


# --------------------------------------------------------------------------
# Corpus evaluation
# --------------------------------------------------------------------------


def _mode_gap(relation: Relation, mode: PromptMode) -> str | None:
    """Why a relation cannot be evaluated in a mode, or None if it can."""
    if mode.kind == "optimized" and relation.optimized_template is None:
        return "no optimized template"
    if mode.kind == "paraphrase" and not relation.paraphrases:
        return "no paraphrases"
    if mode.kind == "autoregressive" and (relation.ar_object_last is None or relation.ar_subject_last is None):
        return "no entity-last templates"
    return None


def _validate_run(mode: PromptMode, caps: BackendCapabilities, options: EvalOptions) -> None:
    if caps.kind is BackendKind.AUTOREGRESSIVE and mode.kind != "autoregressive":
        raise EngineError("this backend only supports entity-last prompts; use autoregressive mode")
    if options.n_best > caps.max_n_best:
        raise EngineError(f"n_best {options.n_best} exceeds the backend's max_n_best {caps.max_n_best}")
    if mode.kind == "autoregressive" and options.evidence and options.evidence_placement is Placement.AFTER:
        raise EngineError("evidence must be placed before entity-last prompts")


def aggregate(
    results: list[InstanceResult] | tuple[InstanceResult, ...],
    relations: dict[str, Relation],
    skipped_relations: tuple[tuple[str, str], ...] = (),
    skipped_instances: int = 0,
) -> CoherencyReport:
    """Fold instance bits into per-relation scores (deterministic order)."""
    ordered = sorted(results, key=lambda r: (r.relation_id, r.triple_index))
    by_relation: dict[str, list[InstanceResult]] = {}
    for result in ordered:
        by_relation.setdefault(result.relation_id, []).append(result)
    scores = []
    for rel_id in sorted(by_relation):
        relation = relations[rel_id]
        group = by_relation[rel_id]
        scores.append(
            RelationScore(
                relation_id=rel_id,
                rel_type=relation.rel_type,
                symmetric=relation.symmetric,
                instances=len(group),
                round1_hits=sum(r.round1_coherent for r in group),
                round2_hits=sum(r.round2_coherent for r in group),
                c1_hits=sum(r.c1 for r in group),
                c2_hits=sum(r.c2 for r in group),
                all_correct_hits=sum(r.all_correct for r in group),
            )
        )
    if not scores:
        raise EmptyRunError("no relation produced any evaluated instance")
    return CoherencyReport(
        relation_scores=tuple(scores),
        skipped_relations=skipped_relations,
        skipped_instances=skipped_instances,
    )


def _run_plan(
    backend: Backend,
    plan: list[tuple[Relation, int, Triple, PromptMode]],
    index: AnswerIndex,
    options: EvalOptions,
    caps: BackendCapabilities,
) -> list[InstanceResult]:
    pool = _CandidatePool(index, options.candidate_scope)

    def one(item: tuple[Relation, int, Triple, PromptMode]) -> InstanceResult:
        relation, idx, triple, mode = item
        return evaluate_instance(
            backend, relation, triple, index, mode, options, triple_index=idx, caps=caps, pool=pool
        )

    if options.parallelism > 1:
        with ThreadPoolExecutor(max_workers=options.parallelism) as executor:
            return list(executor.map(one, plan))
    return [one(item) for item in plan]


def evaluate_corpus(
    backend: Backend,
    corpus: Corpus,
    index: AnswerIndex | None = None,
    mode: PromptMode = MANUAL,
    options: EvalOptions = EvalOptions(),
) -> EvaluationRun:
    """Evaluate every instance the mode allows and macro-average the bits.

    Relations missing the template variant a mode needs are skipped and
    counted, as are instances without evidence in evidence mode. A run where
    nothing is evaluable is an error, never a report full of NaNs.
    """
    index = index if index is not None else build_answer_index(corpus)
    caps = backend.capabilities()
    _validate_run(mode, caps, options)
    plan: list[tuple[Relation, int, Triple, PromptMode]] = []
    skipped_relations: list[tuple[str, str]] = []
    skipped_instances = 0
    for rel_id in sorted(corpus.groups):
        relation = corpus.relations[rel_id]
        gap = _mode_gap(relation, mode)
        if gap is not None:
            skipped_relations.append((rel_id, gap))
            skipped_instances += len(corpus.groups[rel_id])
            continue
        for idx, triple in enumerate(corpus.groups[rel_id]):
            if options.evidence and not triple.evidence:
                skipped_instances += 1
                continue
            plan.append((relation, idx, triple, mode))
    if not plan:
        raise EmptyRunError("no evaluable instances (0 evaluable relations after mode filtering)")
    results = _run_plan(backend, plan, index, options, caps)
    report = aggregate(results, corpus.relations, tuple(skipped_relations), skipped_instances)
    ordered = tuple(sorted(results, key=lambda r: (r.relation_id, r.triple_index)))
    return EvaluationRun(report=report, results=ordered)


# --------------------------------------------------------------------------
# Paraphrase sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSample:
    run: int
    template_index: int
    instances: int
    round1_hits: int
    round2_hits: int

    @property
    def score(self) -> Fraction:
        return Fraction(self.round1_hits + self.round2_hits, 2 * self.instances)


@dataclass(frozen=True)
class SweepRelationScore:
    relation_id: str
    samples: tuple[SweepSample, ...]

    @property
    def min(self) -> Fraction:
        return min(s.score for s in self.samples)

    @property
    def avg(self) -> Fraction:
        return sum((s.score for s in self.samples), start=Fraction(0)) / len(self.samples)

    @property
    def max(self) -> Fraction:
        return max(s.score for s in self.samples)

    @property
    def stddev(self) -> float:
        mean = float(self.avg)
        values = [float(s.score) for s in self.samples]
        return (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5


@dataclass(frozen=True)
class SweepReport:
    relations: tuple[SweepRelationScore, ...]
    runs: int
    seed: int
    skipped_relations: tuple[tuple[str, str], ...] = ()

    @property
    def total_instances(self) -> int:
        return sum(r.samples[0].instances for r in self.relations)

    @property
    def macro_min(self) -> Fraction:
        return _mean([r.min for r in self.relations])

    @property
    def macro_avg(self) -> Fraction:
        return _mean([r.avg for r in self.relations])

    @property
    def macro_max(self) -> Fraction:
        return _mean([r.max for r in self.relations])

    def run_macros(self) -> list[Fraction]:
        """Alternative aggregation: one macro score per run."""
        out = []
        for run in range(self.runs):
            scores = []
            for relation in self.relations:
                for sample in relation.samples:
                    if sample.run == run:
                        scores.append(sample.score)
            out.append(_mean(scores))
        return out


@dataclass(frozen=True)
class SweepRun:
    report: SweepReport
    results_per_run: tuple[tuple[InstanceResult, ...], ...]


def paraphrase_sweep(
    backend: Backend,
    corpus: Corpus,
    index: AnswerIndex | None = None,
    runs: int = 10,
    seed: int = 0,
    options: EvalOptions = EvalOptions(),
) -> SweepRun:
    """Evaluate ``runs`` template assignments sampled per relation.

    Each run draws one paraphrase per covered relation (uniform, seeded);
    relations without paraphrases are excluded and counted. Per-relation
    min/avg/max are taken over that relation's sampled-template scores.
    """
    if runs < 1:
        raise EngineError("sweep needs runs >= 1")
    index = index if index is not None else build_answer_index(corpus)
    caps = backend.capabilities()
    _validate_run(paraphrase(0), caps, options)
    covered = [rel_id for rel_id in sorted(corpus.groups) if corpus.relations[rel_id].paraphrases]
    skipped = tuple(
        (rel_id, "no paraphrases") for rel_id in sorted(corpus.groups) if rel_id not in set(covered)
    )
    if not covered:
        raise EmptyRunError("no relation has paraphrases to sweep over")
    rng = random.Random(seed)
    assignments = [
        {rel_id: sample_paraphrase_index(corpus.relations[rel_id], rng) for rel_id in covered}
        for _ in range(runs)
    ]
    per_relation: dict[str, list[SweepSample]] = {rel_id: [] for rel_id in covered}
    all_results: list[tuple[InstanceResult, ...]] = []
    for run_no, assignment in enumerate(assignments):
        plan = [
            (corpus.relations[rel_id], idx, triple, paraphrase(assignment[rel_id]))
            for rel_id in covered
            for idx, triple in enumerate(corpus.groups[rel_id])
        ]
        results = sorted(_run_plan(backend, plan, index, options, caps), key=lambda r: (r.relation_id, r.triple_index))
        all_results.append(tuple(results))
        for rel_id in covered:
            group = [r for r in results if r.relation_id == rel_id]
            per_relation[rel_id].append(
                SweepSample(
                    run=run_no,
                    template_index=assignment[rel_id],
                    instances=len(group),
                    round1_hits=sum(r.round1_coherent for r in group),
                    round2_hits=sum(r.round2_coherent for r in group),
                )
            )
    report = SweepReport(
        relations=tuple(SweepRelationScore(rel_id, tuple(per_relation[rel_id])) for rel_id in covered),
        runs=runs,
        seed=seed,
        skipped_relations=skipped,
    )
    return SweepRun(report=report, results_per_run=tuple(all_results))
