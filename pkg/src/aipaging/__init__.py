"""Lease-gated execution anchoring: protocol engine plus a deterministic
discrete-event evaluation harness."""

from .model import (
    Aisi,
    Aist,
    Anchor,
    Asp,
    CauseStats,
    Commit,
    EviKind,
    EviRecord,
    EvidenceMode,
    Health,
    Intent,
    LeaseState,
    ModelTier,
    PolicyKind,
    QosBinding,
    RejectCause,
    SteeringEntry,
    TransactionOutcome,
)
from .scenario import ScenarioConfig, load_config
from .sim import run_scenario

__version__ = "0.1.0"

__all__ = [
    "Aisi",
    "Aist",
    "Anchor",
    "Asp",
    "CauseStats",
    "Commit",
    "EviKind",
    "EviRecord",
    "EvidenceMode",
    "Health",
    "Intent",
    "LeaseState",
    "ModelTier",
    "PolicyKind",
    "QosBinding",
    "RejectCause",
    "ScenarioConfig",
    "SteeringEntry",
    "TransactionOutcome",
    "load_config",
    "run_scenario",
    "__version__",
]
