"""Transactional make-before-break anchor moves.

A RelocationJob carries one move through select -> admit -> install ->
flip -> drain -> release. Failures before the flip leave the old path
untouched; the drain window bounds post-flip overlap. Admission reuses
the controller's loop restricted to relocation candidates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .controller import (
    AdmissionLoop,
    Candidate,
    ControlContext,
    Telemetry,
    _observe,
    _score,
    generate_candidates,
)
from .enforcement import PRIORITY_STANDBY, SteeringTable
from .leases import AlreadyTerminal, LeaseTable
from .model import (
    Aist,
    Anchor,
    Asp,
    Commit,
    Health,
    ModelTier,
    QosBinding,
    RejectCause,
    SimTime,
    US_PER_S,
)

HYSTERESIS = 1.2  # serve-latency slack before an overload trigger fires
IMPROVE_MARGIN = 1.2  # another candidate must beat the current path by 20%


class RelocationTrigger(str, Enum):
    MOBILITY = "mobility"
    OVERLOAD = "overload"
    HEALTH = "health"
    FAILURE = "failure"
    MAINTENANCE = "maintenance"


class JobPhase(str, Enum):
    SELECTING = "selecting"
    ADMITTING = "admitting"
    INSTALLING = "installing"
    FLIPPED = "flipped"
    DRAINING = "draining"
    DONE = "done"
    FAILED = "failed"


_PHASE_ORDER = list(JobPhase)


class RelocationRateLimiter:
    """Sliding 1-second window of job starts per identity."""

    def __init__(self, max_rate: float):
        self.max_rate = max_rate
        self._starts: deque[SimTime] = deque()

    def allow(self, now: SimTime) -> bool:
        while self._starts and self._starts[0] <= now - US_PER_S:
            self._starts.popleft()
        return len(self._starts) < self.max_rate

    def record(self, now: SimTime) -> None:
        self._starts.append(now)


def should_relocate(
    current_anchor: Anchor,
    current_tier: ModelTier,
    asp: Asp,
    telemetry: Telemetry,
    anchors: dict[str, Anchor],
    tiers: dict[str, ModelTier],
    limiter: RelocationRateLimiter,
    now: SimTime,
    path_change_hint: bool = False,
) -> Optional[RelocationTrigger]:
    """Decide whether the serving anchor should be abandoned, and why.

    Health beats everything; then the hysteresis check on the current
    predicted latency; then, only when the scenario raised a path-change
    hint, the improvement-margin comparison against the best alternative.
    """
    trigger: Optional[RelocationTrigger] = None
    obs = _observe(current_anchor, telemetry)
    if current_anchor.health == Health.FAILED or not obs.reachable:
        trigger = RelocationTrigger.FAILURE
    elif current_anchor.health == Health.DEGRADED:
        trigger = RelocationTrigger.HEALTH
    else:
        predicted = _score(obs, current_tier)
        if predicted > HYSTERESIS * asp.target_latency_us:
            trigger = RelocationTrigger.OVERLOAD
        elif path_change_hint:
            best = None
            for cand in generate_candidates(asp, anchors, telemetry, tiers):
                if cand.anchor_id != current_anchor.anchor_id:
                    best = cand
                    break
            if best is not None and best.score * IMPROVE_MARGIN < predicted:
                trigger = RelocationTrigger.MOBILITY
    if trigger is None:
        return None
    if not limiter.allow(now):
        return None
    return trigger


@dataclass
class RelocationJob:
    aisi: int
    aist: Aist
    old_lease: int
    old_anchor: str
    trigger: RelocationTrigger
    asp: Asp
    drain_timeout_us: int
    job_id: int
    phase: JobPhase = JobPhase.SELECTING
    new_lease: Optional[int] = None
    standby_entry: Optional[int] = None
    flip_at: Optional[SimTime] = None
    drain_deadline: Optional[SimTime] = None
    fail_cause: Optional[str] = None

    def _advance(self, phase: JobPhase) -> None:
        if _PHASE_ORDER.index(phase) <= _PHASE_ORDER.index(self.phase) and phase != self.phase:
            raise AssertionError(f"job {self.job_id}: phase {self.phase} -> {phase}")
        self.phase = phase

    def on_admitted(
        self, commit1: Commit, enforcement: SteeringTable, now: SimTime
    ) -> None:
        """Install the target path at standby priority, old path untouched."""
        self._advance(JobPhase.INSTALLING)
        entry = enforcement.install_steering(commit1, self.aist.token_id, PRIORITY_STANDBY, now)
        self.new_lease = commit1.lease_id
        self.standby_entry = entry.entry_id

    def flip(self, enforcement: SteeringTable, lease_mgr: LeaseTable, now: SimTime) -> bool:
        """Atomic priority switch; aborts (and cleans up) if the new lease
        died between install and flip."""
        if not lease_mgr.is_valid(self.new_lease, now):
            enforcement.remove_steering(self.new_lease, now, reason="reloc_abort")
            self.fail("target-lease-invalid", enforcement, now)
            return False
        enforcement.flip_priority(self.aisi, self.new_lease, now)
        self._advance(JobPhase.FLIPPED)
        self.flip_at = now
        self.drain_deadline = now + self.drain_timeout_us
        self._advance(JobPhase.DRAINING)
        return True

    def on_drain_deadline(
        self, enforcement: SteeringTable, lease_mgr: LeaseTable, now: SimTime
    ) -> None:
        """Release the old lease and its steering; tolerates a lease that
        already hit a terminal state (e.g. expired mid-drain)."""
        assert self.phase == JobPhase.DRAINING and now == self.drain_deadline
        self.finish_drain(enforcement, lease_mgr, now)

    def finish_drain(
        self, enforcement: SteeringTable, lease_mgr: LeaseTable, now: SimTime
    ) -> None:
        """Tear down the old path now. The drain window is an upper bound,
        so ending it early (e.g. a fresh trigger mid-drain) is legal."""
        assert self.phase == JobPhase.DRAINING
        try:
            lease_mgr.release(self.old_lease, now)
        except AlreadyTerminal:
            pass
        enforcement.remove_steering(self.old_lease, now, reason="relocation")
        self._advance(JobPhase.DONE)

    def fail(self, cause: str, enforcement: SteeringTable, now: SimTime) -> None:
        if self.standby_entry is not None and self.phase == JobPhase.INSTALLING:
            enforcement.remove_steering(self.new_lease, now, reason="reloc_abort")
        self.fail_cause = cause
        self.phase = JobPhase.FAILED


def relocation_candidates(
    asp: Asp,
    anchors: dict[str, Anchor],
    telemetry: Telemetry,
    tiers: dict[str, ModelTier],
    exclude_anchor: str,
) -> list[Candidate]:
    return [
        c
        for c in generate_candidates(asp, anchors, telemetry, tiers)
        if c.anchor_id != exclude_anchor
    ]


def relocate(
    aisi: int,
    aist: Aist,
    old_lease: Commit,
    asp: Asp,
    commit_timeout_us: int,
    drain_timeout_us: int,
    now: SimTime,
    lease_mgr: LeaseTable,
    enforcement: SteeringTable,
    ctx: ControlContext,
    trigger: RelocationTrigger = RelocationTrigger.MAINTENANCE,
    job_id: int = 0,
    on_complete=None,
) -> RelocationJob:
    """Synchronous relocation driver mirroring the event-driven path.

    The clock cursor pays one admission round trip per attempt and then
    the full drain window; the returned job is DONE or FAILED.
    """
    trace = ctx.trace
    job = RelocationJob(
        aisi, aist, old_lease.lease_id, old_lease.anchor_id, trigger, asp, drain_timeout_us, job_id
    )
    clock = now
    trace.append(
        clock, "reloc_start", job=job_id, aisi=aisi, trigger=trigger, old_anchor=old_lease.anchor_id
    )
    candidates = relocation_candidates(asp, ctx.anchors, ctx.telemetry, ctx.tiers, old_lease.anchor_id)
    job._advance(JobPhase.ADMITTING)
    loop = AdmissionLoop(
        asp, None, candidates, commit_timeout_us, now, exclude_anchor=old_lease.anchor_id
    )
    commit1: Optional[Commit] = None
    while commit1 is None:
        candidate = loop.next_attempt(clock)
        if candidate is None:
            cause = "admission-timeout" if loop.timed_out else "no-feasible-target"
            job.fail(cause, enforcement, clock)
            trace.append(clock, "reloc_failed", job=job_id, aisi=aisi, cause=cause)
            return job
        clock += ctx.admission_delay_us
        qos = QosBinding("interactive", asp.target_latency_us)
        result = lease_mgr.request_lease(
            candidate.anchor_id, candidate.tier.tier_id, qos, aisi, asp, clock
        )
        if isinstance(result, Commit):
            commit1 = result
        else:
            loop.on_reject(result, ctx.anchors, ctx.telemetry, ctx.tiers)

    job.on_admitted(commit1, enforcement, clock)
    if not job.flip(enforcement, lease_mgr, clock):
        trace.append(clock, "reloc_failed", job=job_id, aisi=aisi, cause=job.fail_cause)
        return job
    trace.append(
        clock,
        "reloc_flip",
        job=job_id,
        aisi=aisi,
        old_lease=old_lease.lease_id,
        new_lease=commit1.lease_id,
    )
    clock = job.drain_deadline
    job.on_drain_deadline(enforcement, lease_mgr, clock)
    trace.append(
        clock,
        "reloc_success",
        job=job_id,
        aisi=aisi,
        old_lease=old_lease.lease_id,
        new_lease=commit1.lease_id,
        overlap_us=clock - job.flip_at,
    )
    if on_complete is not None:
        on_complete(job, clock)
    return job
