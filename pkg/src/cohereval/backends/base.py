"""Backend abstraction shared by in-process and wire-protocol clients."""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, runtime_checkable

from ..corpus import normalize_entity
from ..prompting import RenderedPrompt
from ..types import CoherevalError


class BackendError(CoherevalError):
    """Transport failure or unusable backend response."""


class ProtocolError(BackendError):
    """The remote side answered, but outside the wire protocol contract."""


class BackendKind(str, Enum):
    MASKED = "masked"
    SEQ2SEQ = "seq2seq"
    AUTOREGRESSIVE = "autoregressive"


@dataclass(frozen=True)
class BackendCapabilities:
    """What a backend can do; stable for the lifetime of a run."""

    kind: BackendKind
    mask_marker: str
    single_token_only: bool
    max_n_best: int
    supports_banning: bool

    def __post_init__(self) -> None:
        if self.kind is BackendKind.AUTOREGRESSIVE:
            if self.mask_marker:
                raise ProtocolError("autoregressive backends must declare an empty mask marker")
        elif not self.mask_marker:
            raise ProtocolError(f"{self.kind.value} backends must declare a mask marker")
        if self.max_n_best < 1:
            raise ProtocolError("max_n_best must be at least 1")

    def to_wire(self) -> dict:
        return {
            "kind": self.kind.value,
            "mask_marker": self.mask_marker,
            "single_token_only": self.single_token_only,
            "max_n_best": self.max_n_best,
            "supports_banning": self.supports_banning,
        }

    @classmethod
    def from_wire(cls, payload: dict) -> "BackendCapabilities":
        try:
            return cls(
                kind=BackendKind(payload["kind"]),
                mask_marker=str(payload["mask_marker"]),
                single_token_only=bool(payload["single_token_only"]),
                max_n_best=int(payload["max_n_best"]),
                supports_banning=bool(payload["supports_banning"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ProtocolError(f"malformed capabilities payload: {exc}") from exc


@dataclass(frozen=True)
class Prediction:
    """One n-best entry; rank is 1-based and contiguous within a list."""

    text: str
    score: float
    rank: int


def predictions_from_wire(items: Iterable[dict], banned: Iterable[str]) -> list[Prediction]:
    """Turn wire predictions into ranked Predictions, dropping banned answers.

    Banned filtering happens here regardless of server-side support, so the
    no-banned-answer guarantee holds for every backend. Ranks are reassigned
    contiguously after filtering.
    """
    banned_norm = {normalize_entity(b) for b in banned}
    out: list[Prediction] = []
    previous = float("inf")
    for item in items:
        try:
            text = str(item["text"])
            score = float(item["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed prediction entry {item!r}: {exc}") from exc
        if score > previous:
            raise ProtocolError("prediction list is not sorted by non-increasing score")
        previous = score
        if normalize_entity(text) in banned_norm:
            continue
        out.append(Prediction(text=text, score=score, rank=len(out) + 1))
    return out


@runtime_checkable
class Backend(Protocol):
    """Uniform inference surface the engine evaluates against."""

    def capabilities(self) -> BackendCapabilities: ...

    def predict(self, prompt: RenderedPrompt, banned: frozenset[str], n_best: int) -> list[Prediction]: ...

    def score_candidates(self, prompt: RenderedPrompt, candidates: Sequence[str]) -> list[tuple[str, float]]: ...

    def token_count(self, entity: str) -> int: ...
