"""Data models and schemas"""

from .schemas import (
    BinaryDataMatrix,
    Bound,
    BootstrapEnvelope,
    ColumnKind,
    CorrelationSummary,
    ExperimentTable,
    FitConfig,
    FitMode,
    FitResult,
    FTestResult,
    Link,
    ModeSummary,
    ReplicateRecord,
    RunManifest,
    ScoreUpdate,
    SelectionReport,
    SelectionRow,
    SimulationSpec,
    SlpcaModel,
    StagedSelection,
    SubspaceAngle,
    WorkingState,
)

__all__ = [
    "BinaryDataMatrix",
    "Bound",
    "BootstrapEnvelope",
    "ColumnKind",
    "CorrelationSummary",
    "ExperimentTable",
    "FitConfig",
    "FitMode",
    "FitResult",
    "FTestResult",
    "Link",
    "ModeSummary",
    "ReplicateRecord",
    "RunManifest",
    "ScoreUpdate",
    "SelectionReport",
    "SelectionRow",
    "SimulationSpec",
    "SlpcaModel",
    "StagedSelection",
    "SubspaceAngle",
    "WorkingState",
]
