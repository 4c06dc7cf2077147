"""Model inference backends: in-process synthetic and wire-protocol HTTP."""
from .base import (
    Backend,
    BackendCapabilities,
    BackendError,
    BackendKind,
    Prediction,
    ProtocolError,
    predictions_from_wire,
)
from .http_client import HttpBackend
from .server import ReferenceServer, serve_reference
from .synthetic import (
    Behavior,
    RelationSpec,
    SyntheticBackend,
    SyntheticKB,
    SyntheticKBConfig,
    generate_synthetic,
)

__all__ = [
    "Backend",
    "BackendCapabilities",
    "BackendError",
    "BackendKind",
    "Behavior",
    "HttpBackend",
    "Prediction",
    "ProtocolError",
    "ReferenceServer",
    "RelationSpec",
    "SyntheticBackend",
    "SyntheticKB",
    "SyntheticKBConfig",
    "generate_synthetic",
    "predictions_from_wire",
    "serve_reference",
]
