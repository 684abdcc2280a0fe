"""Admission controller: contract derivation, identity issuance, candidate
ranking, and the time-bounded admission loop.

The loop core (AdmissionLoop) is a plain state machine so the same logic
can run synchronously (direct calls, unit tests) or be driven event by
event from the simulation engine with a real admission round-trip delay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .enforcement import PRIORITY_ACTIVE, SteeringTable
from .leases import LeaseTable
from .model import (
    Aisi,
    Aist,
    Anchor,
    Asp,
    CauseStats,
    Commit,
    EvidenceMode,
    Health,
    IdSource,
    Intent,
    ModelTier,
    PolicyKind,
    QosBinding,
    RejectCause,
    SimTime,
    TransactionOutcome,
    US_PER_S,
)
from .trace import Trace

TOKEN_LIFETIME_US = 3600 * US_PER_S  # session tokens outlive any lease by design


class PolicyInfeasible(ValueError):
    """The intent demands a tier/locality the policy never allows."""


@dataclass
class OperatorPolicy:
    """Operator-side knobs the transaction runs under."""

    tier_policy: dict[str, tuple[str, ...]]  # intent class -> allowed tiers, preferred first
    regions_served: frozenset[str]
    default_lease_duration_us: int
    commit_timeout_us: int
    drain_timeout_us: int
    evidence_requirements: EvidenceMode = EvidenceMode.MINIMAL
    max_relocation_rate: float = 4.0
    eligible_anchors: Optional[Callable[[Anchor, Asp], bool]] = None

    def __post_init__(self):
        if self.commit_timeout_us <= 0 or self.drain_timeout_us <= 0:
            raise ValueError("commit/drain timeouts must be positive")

    def allowed_tiers(self, outcome_tag: str) -> tuple[str, ...]:
        if outcome_tag in self.tier_policy:
            return self.tier_policy[outcome_tag]
        return self.tier_policy.get("*", ())


@dataclass(frozen=True)
class AnchorObservation:
    """Telemetry snapshot for one anchor as seen by one session."""

    path_latency_us: int
    load_fraction: float
    reachable: bool = True


Telemetry = dict[str, AnchorObservation]


@dataclass
class Candidate:
    anchor_id: str
    tier: ModelTier
    score: float  # predicted latency in us; lower is better
    feasibility: bool = True


@dataclass(frozen=True)
class SessionBehavior:
    """What a policy kind does at session start, on failure, and on churn."""

    kind: PolicyKind
    uses_leases: bool
    gates_installs: bool
    relocates: bool
    renews: bool
    fixed_endpoint: bool
    request_retries: int
    retry_backoff_service_x: int


def select_action(policy_kind: PolicyKind) -> SessionBehavior:
    if policy_kind == PolicyKind.AI_PAGING:
        return SessionBehavior(policy_kind, True, True, True, True, False, 0, 0)
    if policy_kind == PolicyKind.ENDPOINT_BOUND:
        return SessionBehavior(policy_kind, False, False, False, False, True, 3, 1)
    return SessionBehavior(policy_kind, False, False, True, False, False, 0, 0)


def derive_asp(intent: Intent, policy: OperatorPolicy) -> Asp:
    """Intersect the intent's constraints with what the policy will enforce."""
    tiers = policy.allowed_tiers(intent.outcome_tag)
    if not tiers:
        raise PolicyInfeasible(f"no tier mapping for intent class {intent.outcome_tag!r}")
    if intent.locality_requirement:
        locality = frozenset(intent.locality_requirement & policy.regions_served)
    else:
        locality = policy.regions_served
    if not locality:
        raise PolicyInfeasible("intent locality excluded by policy")
    return Asp(
        target_latency_us=intent.target_latency_us,
        max_jitter_us=intent.target_latency_us // 5,
        max_loss_rate=1.0 - intent.reliability_target,
        locality_region=locality,
        allowed_fallback_tiers=tiers,
        evidence_requirements=policy.evidence_requirements,
        max_relocation_rate=policy.max_relocation_rate,
        lease_duration_us=policy.default_lease_duration_us,
    )


def issue_identity(asp: Asp, now: SimTime, ids: IdSource) -> tuple[Aisi, Aist]:
    """Mint a fresh identity and its scoped token; no enforcement state yet."""
    aisi = Aisi(id=ids.take(), created_at=now)
    aist = Aist(
        token_id=ids.take(),
        bound_aisi=aisi.id,
        scope_tiers=asp.allowed_fallback_tiers,
        scope_regions=asp.locality_region,
        expires_at=now + max(asp.lease_duration_us, TOKEN_LIFETIME_US),
    )
    return aisi, aist


def _score(anchor_obs: AnchorObservation, tier: ModelTier) -> float:
    return anchor_obs.path_latency_us + tier.service_mean_us * (1.0 + anchor_obs.load_fraction)


def _observe(anchor: Anchor, telemetry: Telemetry) -> AnchorObservation:
    obs = telemetry.get(anchor.anchor_id)
    if obs is None:
        return AnchorObservation(path_latency_us=anchor.path_latency_us, load_fraction=0.0)
    return obs


def generate_candidates(
    asp: Asp,
    anchors: dict[str, Anchor],
    telemetry: Telemetry,
    tiers: dict[str, ModelTier],
) -> list[Candidate]:
    """Feasible (anchor, preferred-tier) pairs ranked by predicted latency.

    Hard filters: locality, an allowed tier on offer, health != failed,
    reachability. Ties break on (cost, anchor_id).
    """
    out: list[Candidate] = []
    for anchor in anchors.values():
        if anchor.health == Health.FAILED:
            continue
        if anchor.region not in asp.locality_region:
            continue
        obs = _observe(anchor, telemetry)
        if not obs.reachable:
            continue
        tier = next(
            (tiers[t] for t in asp.allowed_fallback_tiers if t in anchor.tiers_offered), None
        )
        if tier is None:
            continue
        out.append(Candidate(anchor.anchor_id, tier, _score(obs, tier)))
    out.sort(key=lambda c: (c.score, c.tier.cost, c.anchor_id))
    return out


def fallback_candidates(
    asp: Asp,
    anchors: dict[str, Anchor],
    telemetry: Telemetry,
    tiers: dict[str, ModelTier],
    already: set[tuple[str, str]],
) -> list[Candidate]:
    """Permitted tier-downshift variants not yet enqueued, ranked like the
    primary list. Used only after capacity/health rejects."""
    out: list[Candidate] = []
    for anchor in anchors.values():
        if anchor.health == Health.FAILED:
            continue
        if anchor.region not in asp.locality_region:
            continue
        obs = _observe(anchor, telemetry)
        if not obs.reachable:
            continue
        for tier_id in asp.allowed_fallback_tiers:
            if tier_id not in anchor.tiers_offered:
                continue
            if (anchor.anchor_id, tier_id) in already:
                continue
            tier = tiers[tier_id]
            out.append(Candidate(anchor.anchor_id, tier, _score(obs, tier)))
    out.sort(key=lambda c: (c.score, c.tier.cost, c.anchor_id))
    return out


class AdmissionLoop:
    """The admission loop of one transaction, bounded by the commit timeout.

    Drive it with next_attempt()/on_reject(); it never touches the clock or
    the lease table itself.
    """

    def __init__(
        self,
        asp: Asp,
        aisi: Aisi,
        candidates: list[Candidate],
        commit_timeout_us: int,
        started_at: SimTime,
        exclude_anchor: Optional[str] = None,
    ):
        self.asp = asp
        self.aisi = aisi
        self.started_at = started_at
        self.commit_timeout_us = commit_timeout_us
        self.exclude_anchor = exclude_anchor
        self.queue: list[Candidate] = [
            c for c in candidates if c.feasibility and c.anchor_id != exclude_anchor
        ]
        self.attempted: set[tuple[str, str]] = set()
        self.causes = CauseStats()
        self.expanded = False
        self.attempts = 0
        self.timed_out = False

    def next_attempt(self, now: SimTime) -> Optional[Candidate]:
        """Next-best candidate, or None when exhausted or out of time."""
        if not self.queue:
            return None
        if now - self.started_at >= self.commit_timeout_us:
            self.timed_out = True
            self.causes.record(RejectCause.TIMEOUT)
            return None
        candidate = self.queue.pop(0)
        self.attempted.add((candidate.anchor_id, candidate.tier.tier_id))
        self.attempts += 1
        return candidate

    def on_reject(
        self,
        cause: RejectCause,
        anchors: dict[str, Anchor],
        telemetry: Telemetry,
        tiers: dict[str, ModelTier],
    ) -> list[Candidate]:
        """Record the cause; on the first capacity/health reject, widen the
        queue with permitted fallback tiers. Policy causes are never cured
        by a weaker tier, so they do not expand."""
        self.causes.record(cause)
        added: list[Candidate] = []
        if not self.expanded and cause in (RejectCause.CAPACITY, RejectCause.HEALTH):
            self.expanded = True
            enqueued = self.attempted | {(c.anchor_id, c.tier.tier_id) for c in self.queue}
            added = [
                c
                for c in fallback_candidates(self.asp, anchors, telemetry, tiers, enqueued)
                if c.anchor_id != self.exclude_anchor
            ]
            self.queue.extend(added)
            self.queue.sort(key=lambda c: (c.score, c.tier.cost, c.anchor_id))
        return added


@dataclass
class ControlContext:
    """Everything the synchronous transaction driver needs besides the
    lease and steering tables."""

    anchors: dict[str, Anchor]
    tiers: dict[str, ModelTier]
    ids: IdSource
    trace: Trace
    admission_delay_us: int = 5_000
    telemetry: Telemetry = field(default_factory=dict)
    on_success: Optional[Callable] = None  # (outcome, now) -> None, evidence hook


def run_transaction(
    intent: Intent,
    policy: OperatorPolicy,
    now: SimTime,
    lease_mgr: LeaseTable,
    enforcement: SteeringTable,
    ctx: ControlContext,
    label: str = "txn",
) -> TransactionOutcome:
    """Synchronous end-to-end transaction: derive, issue, rank, admit.

    Each admission attempt advances a local clock cursor by the admission
    round-trip delay; the trace therefore shows the same (time, seq) shape
    the event-driven path produces.
    """
    trace = ctx.trace
    clock = now
    try:
        asp = derive_asp(intent, policy)
    except PolicyInfeasible:
        aisi = Aisi(id=ctx.ids.take(), created_at=now)
        causes = CauseStats()
        causes.record(RejectCause.POLICY)
        trace.append(clock, "txn_reject", txn=label, causes=_causes_str(causes), elapsed_us=0)
        return TransactionOutcome(aisi=aisi, elapsed_us=0, causes=causes)

    aisi, aist = issue_identity(asp, now, ctx.ids)
    candidates = generate_candidates(asp, ctx.anchors, ctx.telemetry, ctx.tiers)
    loop = AdmissionLoop(asp, aisi, candidates, policy.commit_timeout_us, now)
    trace.append(clock, "txn_start", txn=label, aisi=aisi.id, t_c_us=policy.commit_timeout_us)

    while True:
        candidate = loop.next_attempt(clock)
        if candidate is None:
            break
        trace.append(
            clock,
            "txn_attempt",
            txn=label,
            n=loop.attempts,
            anchor=candidate.anchor_id,
            tier=candidate.tier.tier_id,
            score_us=round(candidate.score),
        )
        clock += ctx.admission_delay_us
        qos = QosBinding(treatment_class="interactive", latency_budget_us=asp.target_latency_us)
        result = lease_mgr.request_lease(
            candidate.anchor_id, candidate.tier.tier_id, qos, aisi.id, asp, clock
        )
        if isinstance(result, Commit):
            trace.append(clock, "txn_reply", txn=label, anchor=candidate.anchor_id, accept=1)
            enforcement.install_steering(result, aist.token_id, PRIORITY_ACTIVE, clock)
            outcome = TransactionOutcome(
                aisi=aisi, elapsed_us=clock - now, aist=aist, commit=result, causes=loop.causes
            )
            trace.append(
                clock, "txn_success", txn=label, lease=result.lease_id, elapsed_us=outcome.elapsed_us
            )
            if ctx.on_success is not None:
                ctx.on_success(outcome, clock)
            return outcome
        trace.append(
            clock, "txn_reply", txn=label, anchor=candidate.anchor_id, accept=0, cause=result
        )
        loop.on_reject(result, ctx.anchors, ctx.telemetry, ctx.tiers)

    trace.append(
        clock,
        "txn_reject",
        txn=label,
        causes=_causes_str(loop.causes),
        elapsed_us=clock - now,
    )
    return TransactionOutcome(aisi=aisi, elapsed_us=clock - now, causes=loop.causes)


def _causes_str(causes: CauseStats) -> str:
    if not causes.histogram:
        return "none"
    return ",".join(f"{c.value}:{n}" for c, n in sorted(causes.histogram.items(), key=lambda kv: kv[0].value))
