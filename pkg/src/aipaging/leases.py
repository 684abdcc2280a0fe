"""Admission lease manager: the single source of truth for lease validity.

Couples anchor-side capacity admission (one slot per active lease) with
network-side enforcement authorization. Every lifecycle transition is
written to the run trace at the instant it happens.
"""

from __future__ import annotations

import heapq
from typing import Callable, Optional, Union

from .model import (
    Anchor,
    Asp,
    Commit,
    Health,
    LeaseState,
    QosBinding,
    RejectCause,
    SimTime,
    TerminalTransition,
)
from .trace import Trace


class LeaseNotFound(KeyError):
    pass


class AlreadyTerminal(ValueError):
    pass


class LeaseTable:
    """Issues, expires, revokes and releases admission leases.

    anchor_usage[a] always equals the number of active leases on a and
    never exceeds a's capacity; the expiry queue holds every active lease
    exactly once (terminal leases are skipped lazily on pop).
    """

    def __init__(
        self,
        anchors: dict[str, Anchor],
        trace: Trace,
        ids,
        eligibility: Optional[Callable[[Anchor, Asp], bool]] = None,
    ):
        self.anchors = anchors
        self.trace = trace
        self.ids = ids
        self.eligibility = eligibility
        self.leases: dict[int, Commit] = {}
        self.anchor_usage: dict[str, int] = {a: 0 for a in anchors}
        self._expiry_queue: list[tuple[SimTime, int]] = []

    # -- admission ---------------------------------------------------------

    def request_lease(
        self, anchor_id: str, tier_id: str, qos: QosBinding, aisi: int, asp: Asp, now: SimTime
    ) -> Union[Commit, RejectCause]:
        anchor = self.anchors.get(anchor_id)
        if anchor is None or anchor.health == Health.FAILED:
            return RejectCause.HEALTH
        if self.anchor_usage[anchor_id] >= anchor.capacity:
            return RejectCause.CAPACITY
        if anchor.region not in asp.locality_region:
            return RejectCause.LOCALITY
        if self.eligibility is not None and not self.eligibility(anchor, asp):
            return RejectCause.POLICY
        return self._issue(anchor_id, tier_id, qos, aisi, asp, now)

    def renew(self, lease_id: int, asp: Asp, now: SimTime) -> Union[Commit, RejectCause]:
        """Replace an active lease by a fresh one on the same anchor.

        The swap is usage-neutral and atomic (release + issue share one
        timestamp), so a renewal never self-rejects against its own slot.
        """
        old = self._get(lease_id)
        if old.state != LeaseState.ACTIVE:
            raise AlreadyTerminal(f"lease {lease_id} is {old.state.value}")
        anchor = self.anchors[old.anchor_id]
        if anchor.health == Health.FAILED:
            return RejectCause.HEALTH
        self._terminate(old, LeaseState.RELEASED, now, "lease_released", reason="renewal")
        return self._issue(old.anchor_id, old.tier_id, old.qos, old.aisi, asp, now)

    def _issue(
        self, anchor_id: str, tier_id: str, qos: QosBinding, aisi: int, asp: Asp, now: SimTime
    ) -> Commit:
        lease = Commit(
            lease_id=self.ids.take(),
            aisi=aisi,
            anchor_id=anchor_id,
            tier_id=tier_id,
            qos=qos,
            issued_at=now,
            expires_at=now + asp.lease_duration_us,
        )
        self.leases[lease.lease_id] = lease
        self.anchor_usage[anchor_id] += 1
        heapq.heappush(self._expiry_queue, (lease.expires_at, lease.lease_id))
        self.trace.append(
            now,
            "lease_issued",
            lease=lease.lease_id,
            aisi=aisi,
            anchor=anchor_id,
            tier=tier_id,
            qos=qos.treatment_class,
            expires_us=lease.expires_at,
        )
        return lease

    # -- lifecycle ---------------------------------------------------------

    def next_expiry(self) -> Optional[tuple[SimTime, int]]:
        """Earliest (expires_at, lease_id) still pending, or None."""
        while self._expiry_queue:
            expires_at, lease_id = self._expiry_queue[0]
            lease = self.leases.get(lease_id)
            if lease is None or lease.state != LeaseState.ACTIVE or lease.expires_at != expires_at:
                heapq.heappop(self._expiry_queue)
                continue
            return expires_at, lease_id
        return None

    def expire_due(self, now: SimTime) -> list[int]:
        """Transition every active lease with expires_at <= now, in id order."""
        due: list[int] = []
        while True:
            head = self.next_expiry()
            if head is None or head[0] > now:
                break
            heapq.heappop(self._expiry_queue)
            due.append(head[1])
        due.sort()
        for lease_id in due:
            self._terminate(self.leases[lease_id], LeaseState.EXPIRED, now, "lease_expired")
        return due

    def revoke(self, lease_id: int, cause: str, now: SimTime) -> Commit:
        lease = self._get(lease_id)
        if lease.state != LeaseState.ACTIVE:
            raise AlreadyTerminal(f"lease {lease_id} is {lease.state.value}")
        self._terminate(lease, LeaseState.REVOKED, now, "lease_revoked", cause=cause)
        return lease

    def release(self, lease_id: int, now: SimTime) -> Commit:
        lease = self._get(lease_id)
        if lease.state != LeaseState.ACTIVE:
            raise AlreadyTerminal(f"lease {lease_id} is {lease.state.value}")
        self._terminate(lease, LeaseState.RELEASED, now, "lease_released", reason="release")
        return lease

    def is_valid(self, lease_id: int, now: SimTime) -> bool:
        lease = self.leases.get(lease_id)
        return lease is not None and lease.is_valid_at(now)

    def get(self, lease_id: int) -> Optional[Commit]:
        return self.leases.get(lease_id)

    def active_on(self, anchor_id: str) -> list[int]:
        return sorted(
            l.lease_id
            for l in self.leases.values()
            if l.anchor_id == anchor_id and l.state == LeaseState.ACTIVE
        )

    def _terminate(
        self, lease: Commit, state: LeaseState, now: SimTime, category: str, **extra
    ) -> None:
        try:
            lease.transition(state)
        except TerminalTransition as exc:
            raise AlreadyTerminal(str(exc)) from exc
        self.anchor_usage[lease.anchor_id] -= 1
        self.trace.append(now, category, lease=lease.lease_id, anchor=lease.anchor_id, **extra)

    def _get(self, lease_id: int) -> Commit:
        lease = self.leases.get(lease_id)
        if lease is None:
            raise LeaseNotFound(f"lease {lease_id} not found")
        return lease

    # -- debug sweep -------------------------------------------------------

    def check_capacity_safety(self) -> None:
        for anchor_id, anchor in self.anchors.items():
            used = self.anchor_usage[anchor_id]
            active = len(self.active_on(anchor_id))
            if used != active:
                raise AssertionError(f"{anchor_id}: usage {used} != active leases {active}")
            if used > anchor.capacity:
                raise AssertionError(f"{anchor_id}: usage {used} exceeds capacity {anchor.capacity}")
