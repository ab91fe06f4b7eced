"""Directory-watching document extraction with multi-engine fan-out and field-level majority voting."""

from .canon import canonicalize, render
from .model import (
    Ballot,
    CanonicalFieldMap,
    CanonValue,
    DocumentFile,
    EngineDescriptor,
    Extraction,
    MonitorState,
    NoiseModel,
    PipelineResult,
    StructurerDescriptor,
    VoteOutcome,
    VotingConfig,
)
from .vote import explain, majority_vote

__version__ = "0.1.0"

__all__ = [
    "Ballot",
    "CanonValue",
    "CanonicalFieldMap",
    "DocumentFile",
    "EngineDescriptor",
    "Extraction",
    "MonitorState",
    "NoiseModel",
    "PipelineResult",
    "StructurerDescriptor",
    "VoteOutcome",
    "VotingConfig",
    "canonicalize",
    "explain",
    "majority_vote",
    "render",
]
