"""Data wiring for plugin pipelines with cached recomputation and full provenance."""

from .links import LinkState, Snapshot, SnapshotPolicy
from .manager import FeedEvent, Pipeline, RunConfig, RunError, RunReport, UpdateTrigger
from .provenance import ConceptEdge, ProvenanceEvent, Registry
from .store import AnnotatedValue, ContentStore, Minter, StorePolicy
from .tasks import CommandService, ExecutionRecord, FixtureService, TaskRuntime
from .wiring import InputSlot, PipelineSpec, TaskDecl, WiringError, adjacency, parse, render, validate

__version__ = "0.1.0"

__all__ = [
    "AnnotatedValue",
    "CommandService",
    "ConceptEdge",
    "ContentStore",
    "ExecutionRecord",
    "FeedEvent",
    "FixtureService",
    "InputSlot",
    "LinkState",
    "Minter",
    "Pipeline",
    "PipelineSpec",
    "ProvenanceEvent",
    "Registry",
    "RunConfig",
    "RunError",
    "RunReport",
    "Snapshot",
    "SnapshotPolicy",
    "StorePolicy",
    "TaskDecl",
    "TaskRuntime",
    "UpdateTrigger",
    "WiringError",
    "adjacency",
    "parse",
    "render",
    "validate",
]
