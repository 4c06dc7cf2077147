"""Shared helpers for the test suite (imported by name, not a conftest)."""
from __future__ import annotations

from collections.abc import Sequence

from cohereval.backends.base import BackendCapabilities, BackendKind, Prediction, predictions_from_wire
from cohereval.backends.synthetic import SyntheticKB
from cohereval.corpus import Corpus, LoadReport, Relation, Triple
from cohereval.prompting import RenderedPrompt
from cohereval.types import Direction


def make_corpus(relations: list[Relation], triples: list[Triple]) -> Corpus:
    groups: dict[str, list[Triple]] = {}
    for t in triples:
        groups.setdefault(t.relation_id, []).append(t)
    return Corpus(
        relations={r.id: r for r in relations},
        groups={k: tuple(v) for k, v in groups.items()},
        load_report=LoadReport(kept=len(triples)),
    )


def kb_from_corpus(corpus: Corpus, behavior, seed: int = 0) -> SyntheticKB:
    subjects: dict[str, set[str]] = {}
    objects: dict[str, set[str]] = {}
    facts = []
    for group in corpus.groups.values():
        for t in group:
            subjects.setdefault(t.relation_id, set()).add(t.subject)
            objects.setdefault(t.relation_id, set()).add(t.object)
            facts.append(t)
    return SyntheticKB(
        relations=dict(corpus.relations),
        facts=tuple(facts),
        behavior=behavior,
        seed=seed,
        subject_pools={k: tuple(sorted(v)) for k, v in subjects.items()},
        object_pools={k: tuple(sorted(v)) for k, v in objects.items()},
    )


class ScriptedBackend:
    """Answers keyed by (direction, known entity appearing in the prompt)."""

    def __init__(self, script: dict[tuple[Direction, str], list[str]]):
        # longest known entity first so substrings cannot shadow full names
        self._script = sorted(script.items(), key=lambda kv: -len(kv[0][1]))

    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            kind=BackendKind.MASKED,
            mask_marker="[MASK]",
            single_token_only=False,
            max_n_best=10,
            supports_banning=False,
        )

    def _answers(self, prompt: RenderedPrompt) -> list[str]:
        for (direction, known), answers in self._script:
            if direction is prompt.direction and known in prompt.text:
                return answers
        return []

    def predict(self, prompt: RenderedPrompt, banned: frozenset[str], n_best: int) -> list[Prediction]:
        items = [{"text": a, "score": float(-i)} for i, a in enumerate(self._answers(prompt))]
        return predictions_from_wire(items[:n_best], banned)

    def score_candidates(self, prompt: RenderedPrompt, candidates: Sequence[str]) -> list[tuple[str, float]]:
        wanted = {a.lower() for a in self._answers(prompt)}
        return [(c, 0.0 if c.lower() in wanted else -1.0) for c in candidates]

    def token_count(self, entity: str) -> int:
        return len(entity.split())
