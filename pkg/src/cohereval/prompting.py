"""Cloze prompt construction for both query directions.

The template function maps (known entity, relation) to a natural-language
prompt. Rendering fills one slot with the known entity and the other with
the backend's placeholder; autoregressive rendering instead cuts the
template at the trailing slot so the answer position is the very end.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .corpus import Relation
from .types import OBJECT_SLOT, SUBJECT_SLOT, CoherevalError, Direction


class PromptError(CoherevalError):
    """A prompt could not be built from the given relation and mode."""


@dataclass(frozen=True)
class PromptMode:
    """Which template variant to render.

    ``paraphrase_index`` selects one entry of ``relation.paraphrases`` and is
    only meaningful for the paraphrase kind.
    """

    kind: str
    paraphrase_index: int | None = None

    def __str__(self) -> str:
        if self.kind == "paraphrase" and self.paraphrase_index is not None:
            return f"paraphrase[{self.paraphrase_index}]"
        return self.kind


MANUAL = PromptMode("manual")
OPTIMIZED = PromptMode("optimized")
AUTOREGRESSIVE = PromptMode("autoregressive")


def paraphrase(index: int) -> PromptMode:
    return PromptMode("paraphrase", index)


class Placement(str, Enum):
    """Where an evidence paragraph goes relative to the prompt."""

    BEFORE = "before"
    AFTER = "after"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    direction: Direction
    slot_marker: str
    mode: PromptMode


def template_for(relation: Relation, direction: Direction, mode: PromptMode) -> str:
    """Pick the template variant a mode demands, or raise PromptError."""
    if mode.kind == "manual":
        return relation.template
    if mode.kind == "optimized":
        if relation.optimized_template is None:
            raise PromptError(f"relation {relation.id} has no optimized template")
        return relation.optimized_template
    if mode.kind == "paraphrase":
        if not relation.paraphrases:
            raise PromptError(f"relation {relation.id} has no paraphrases")
        if mode.paraphrase_index is None or not 0 <= mode.paraphrase_index < len(relation.paraphrases):
            raise PromptError(f"relation {relation.id}: paraphrase index {mode.paraphrase_index} out of range")
        return relation.paraphrases[mode.paraphrase_index]
    if mode.kind == "autoregressive":
        template = relation.ar_object_last if direction is Direction.PREDICT_OBJECT else relation.ar_subject_last
        if template is None:
            raise PromptError(f"relation {relation.id} has no entity-last template for {direction.value}")
        return template
    raise PromptError(f"unknown prompt mode {mode.kind!r}")


def render(
    relation: Relation,
    known_entity: str,
    direction: Direction,
    slot_marker: str,
    mode: PromptMode = MANUAL,
) -> RenderedPrompt:
    """Render a prompt with the known entity filled in.

    PREDICT_OBJECT places the known entity in the subject slot and the
    marker in the object slot; PREDICT_SUBJECT mirrors that. In
    autoregressive mode the marker must be empty and the rendered text stops
    where the answer would begin.
    """
    if SUBJECT_SLOT in known_entity or OBJECT_SLOT in known_entity:
        raise PromptError(f"entity {known_entity!r} contains a template slot marker")
    template = template_for(relation, direction, mode)
    known_slot = SUBJECT_SLOT if direction is Direction.PREDICT_OBJECT else OBJECT_SLOT
    unknown_slot = OBJECT_SLOT if direction is Direction.PREDICT_OBJECT else SUBJECT_SLOT

    if mode.kind == "autoregressive":
        if slot_marker:
            raise PromptError("autoregressive prompts take an empty slot marker")
        cut = template.rfind(unknown_slot)
        text = template[:cut].replace(known_slot, known_entity).rstrip()
        return RenderedPrompt(text=text, direction=direction, slot_marker="", mode=mode)

    if not slot_marker:
        raise PromptError("slot marker must be non-empty outside autoregressive mode")
    text = template.replace(known_slot, known_entity).replace(unknown_slot, slot_marker)
    return RenderedPrompt(text=text, direction=direction, slot_marker=slot_marker, mode=mode)


def attach_evidence(prompt: RenderedPrompt, evidence: str, placement: Placement = Placement.AFTER) -> RenderedPrompt:
    """Join an evidence paragraph to a prompt with a single-space separator."""
    evidence = evidence.strip()
    if not evidence:
        raise PromptError("evidence paragraph must be non-empty")
    if prompt.mode.kind == "autoregressive" and placement is Placement.AFTER:
        raise PromptError("evidence after an entity-last prompt would displace the answer position")
    if placement is Placement.BEFORE:
        text = f"{evidence} {prompt.text}"
    else:
        text = f"{prompt.text} {evidence}"
    return RenderedPrompt(text=text, direction=prompt.direction, slot_marker=prompt.slot_marker, mode=prompt.mode)


def sample_paraphrase_index(relation: Relation, rng: random.Random) -> int:
    """Uniform draw of a paraphrase index, deterministic under a fixed seed."""
    if not relation.paraphrases:
        raise PromptError(f"relation {relation.id} has no paraphrases to sample")
    return rng.randrange(len(relation.paraphrases))


def sample_paraphrase(relation: Relation, rng: random.Random) -> str:
    return relation.paraphrases[sample_paraphrase_index(relation, rng)]
