"""Domain types for the lease-gated execution anchoring protocol.

Everything here is a plain value: constructors, validation, and equality
only. Simulation time is an integer count of microseconds so that event
ordering is never subject to floating-point ambiguity; durations given in
milliseconds are converted exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Optional

SimTime = int  # microseconds since run start

US_PER_MS = 1_000
US_PER_S = 1_000_000

#: Sentinel lease reference carried by steering entries installed without an
#: admission lease (the ungated baselines) and by admission-reject evidence
#: records. Real lease ids start at 1.
UNGATED = 0


def ms_to_us(value: "float | int | str") -> int:
    """Convert a millisecond quantity to integer microseconds, exactly.

    Accepts ints, floats and decimal strings; raises ValueError when the
    value does not land on a whole microsecond.
    """
    try:
        d = Decimal(str(value)) * US_PER_MS
    except InvalidOperation as exc:
        raise ValueError(f"bad duration: {value!r}") from exc
    if d != d.to_integral_value():
        raise ValueError(f"duration {value!r} ms is not a whole microsecond count")
    return int(d)


class InvalidField(ValueError):
    """A domain-type invariant was violated; .field names the offender."""

    def __init__(self, field_name: str, message: str = ""):
        self.field = field_name
        super().__init__(f"invalid-field({field_name})" + (f": {message}" if message else ""))


class SiteClass(str, Enum):
    EDGE = "edge"
    CLOUD = "cloud"


class Health(str, Enum):
    HEALTHY = "healthy"
    DEGRADED = "degraded"
    FAILED = "failed"


class LeaseState(str, Enum):
    ACTIVE = "active"
    EXPIRED = "expired"
    REVOKED = "revoked"
    RELEASED = "released"


TERMINAL_LEASE_STATES = frozenset({LeaseState.EXPIRED, LeaseState.REVOKED, LeaseState.RELEASED})


class EvidenceMode(str, Enum):
    MINIMAL = "minimal"
    PER_EVENT = "per-event"
    PER_REQUEST = "per-request"


class RejectCause(str, Enum):
    CAPACITY = "capacity"
    POLICY = "policy"
    LOCALITY = "locality"
    HEALTH = "health"
    TIMEOUT = "timeout"


class EviKind(str, Enum):
    SERVE = "serve"
    RELOCATION = "relocation"
    LEASE_EXPIRY = "lease_expiry"
    LEASE_REVOCATION = "lease_revocation"
    ADMISSION_REJECT = "admission_reject"
    VIOLATION = "violation"


class PolicyKind(str, Enum):
    AI_PAGING = "aipaging"
    ENDPOINT_BOUND = "endpointbound"
    BEST_EFFORT = "besteffort"


@dataclass(frozen=True)
class Intent:
    """What the client asks for: an outcome plus delivery constraints."""

    outcome_tag: str
    target_latency_us: int
    reliability_target: float
    locality_requirement: frozenset[str] = frozenset()
    trust_requirements: frozenset[str] = frozenset()
    budget: float = 0.0

    def __post_init__(self):
        if self.target_latency_us <= 0:
            raise InvalidField("target_latency")
        if not 0.0 <= self.reliability_target <= 1.0:
            raise InvalidField("reliability_target")
        if self.budget < 0:
            raise InvalidField("budget")


@dataclass(frozen=True)
class Asp:
    """The enforceable service contract derived from an intent under policy."""

    target_latency_us: int
    max_jitter_us: int
    max_loss_rate: float
    locality_region: frozenset[str]
    allowed_fallback_tiers: tuple[str, ...]  # preferred first
    evidence_requirements: EvidenceMode
    max_relocation_rate: float  # relocation starts per simulated second
    lease_duration_us: int


def validate_asp(asp: Asp) -> None:
    """Raise InvalidField for the first violated contract invariant."""
    if asp.target_latency_us <= 0:
        raise InvalidField("target_latency")
    if asp.max_jitter_us <= 0:
        raise InvalidField("max_jitter")
    if not 0.0 <= asp.max_loss_rate <= 1.0:
        raise InvalidField("max_loss_rate")
    if not asp.locality_region:
        raise InvalidField("locality_region")
    if not asp.allowed_fallback_tiers:
        raise InvalidField("allowed_fallback_tiers")
    if asp.max_relocation_rate <= 0:
        raise InvalidField("max_relocation_rate")
    if asp.lease_duration_us <= 0:
        raise InvalidField("lease_duration")


@dataclass(frozen=True)
class Aisi:
    """Stable service identity; persists unchanged across anchor moves."""

    id: int
    created_at: SimTime


@dataclass(frozen=True)
class Aist:
    """Session token scoping authorization to an identity and constraints."""

    token_id: int
    bound_aisi: int
    scope_tiers: tuple[str, ...]
    scope_regions: frozenset[str]
    expires_at: SimTime


@dataclass(frozen=True)
class ModelTier:
    tier_id: str
    service_mean_us: int
    service_jitter: bool  # exponential service time when True, deterministic otherwise
    cost: float

    def __post_init__(self):
        if self.service_mean_us <= 0:
            raise InvalidField("service_time_distribution")


@dataclass
class Anchor:
    """An execution anchor: where an admitted model tier actually runs.

    capacity counts admission slots (one per active lease or per ungated
    session holding the anchor); servers is the parallel service width.
    Both are mutated by scenario injections.
    """

    anchor_id: str
    site_class: SiteClass
    region: str
    tiers_offered: tuple[str, ...]
    capacity: int
    path_latency_us: int
    servers: int = 1
    health: Health = Health.HEALTHY

    def __post_init__(self):
        if self.capacity < 0:
            raise InvalidField("capacity")
        if self.servers <= 0:
            raise InvalidField("servers")
        if self.path_latency_us < 0:
            raise InvalidField("path_latency")


@dataclass(frozen=True)
class QosBinding:
    treatment_class: str
    latency_budget_us: int

    def __post_init__(self):
        if self.latency_budget_us <= 0:
            raise InvalidField("latency_budget")


class TerminalTransition(ValueError):
    """Attempted transition out of an absorbing lease state."""


@dataclass
class Commit:
    """Time-bounded admission lease: the sole authority for steering state."""

    lease_id: int
    aisi: int
    anchor_id: str
    tier_id: str
    qos: QosBinding
    issued_at: SimTime
    expires_at: SimTime
    state: LeaseState = LeaseState.ACTIVE

    def __post_init__(self):
        if self.expires_at <= self.issued_at:
            raise InvalidField("expires_at")

    def transition(self, new_state: LeaseState) -> None:
        """active -> {expired, revoked, released}; terminal states absorb."""
        if new_state == LeaseState.ACTIVE:
            raise TerminalTransition(f"lease {self.lease_id}: cannot re-activate")
        if self.state in TERMINAL_LEASE_STATES:
            raise TerminalTransition(
                f"lease {self.lease_id}: {self.state.value} is terminal, cannot enter {new_state.value}"
            )
        self.state = new_state

    def is_valid_at(self, now: SimTime) -> bool:
        return self.state == LeaseState.ACTIVE and now < self.expires_at


@dataclass
class SteeringEntry:
    """User-plane state: classifier -> anchor under a QoS binding.

    backing_lease is UNGATED for entries installed by the non-leased
    baselines; under the lease-gated policy it must reference a lease that
    is active for the entry's whole lifetime.
    """

    entry_id: int
    aisi: int
    aist: int
    anchor_id: str
    qos: QosBinding
    backing_lease: int
    priority: int
    installed_at: SimTime


@dataclass(frozen=True)
class EviRecord:
    """Audit record binding an observation to an identity and lease state."""

    timestamp: SimTime
    aisi: int
    lease_refs: tuple[int, ...]
    anchor_id: str
    tier_id: str
    event_kind: EviKind
    observables: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        expected = 2 if self.event_kind == EviKind.RELOCATION else 1
        if len(self.lease_refs) != expected:
            raise InvalidField(
                "lease_refs",
                f"{self.event_kind.value} records carry exactly {expected} lease ref(s)",
            )


@dataclass
class CauseStats:
    """Histogram of admission-reject causes accumulated by one transaction."""

    histogram: dict[RejectCause, int] = field(default_factory=dict)

    def record(self, cause: RejectCause) -> None:
        self.histogram[cause] = self.histogram.get(cause, 0) + 1

    def total(self) -> int:
        return sum(self.histogram.values())


@dataclass
class TransactionOutcome:
    """SUCCESS carries (identity, token, lease); REJECT carries the causes."""

    aisi: Aisi
    elapsed_us: int
    aist: Optional[Aist] = None
    commit: Optional[Commit] = None
    causes: Optional[CauseStats] = None

    @property
    def success(self) -> bool:
        return self.commit is not None


class IdSource:
    """Per-run monotone 64-bit id counter shared by every artifact kind."""

    def __init__(self, start: int = 1):
        self._next = start

    def take(self) -> int:
        value = self._next
        self._next += 1
        return value
