"""Shared vocabulary types used across the harness."""
from __future__ import annotations

from enum import Enum

TOOL_VERSION = "0.1.0"

# Slot markers used inside cloze templates on disk.
SUBJECT_SLOT = "[X]"
OBJECT_SLOT = "[Y]"


class CoherevalError(Exception):
    """Base class for every error the harness raises on purpose."""


class Direction(str, Enum):
    """Which entity a query asks the model to produce."""

    PREDICT_SUBJECT = "predict_subject"
    PREDICT_OBJECT = "predict_object"

    def other(self) -> "Direction":
        if self is Direction.PREDICT_SUBJECT:
            return Direction.PREDICT_OBJECT
        return Direction.PREDICT_SUBJECT


class RelType(str, Enum):
    """Cardinality class of a relation."""

    ONE_TO_ONE = "1-1"
    N_TO_ONE = "N-1"
    N_TO_M = "N-M"
