"""User-plane model: priority-classified steering gated on lease validity.

Install/remove/flip all happen inside single engine events, so their
atomicity comes from the execution model rather than locks. The classify
tripwire re-checks lease validity on every lookup; it must never fire when
removal is correct and converts a latent bug into a counted violation.
"""

from __future__ import annotations

from typing import Callable, Optional

from .model import Commit, QosBinding, SimTime, SteeringEntry, UNGATED
from .trace import Trace

PRIORITY_ACTIVE = 10
PRIORITY_STANDBY = 5


class LeaseInvalid(ValueError):
    """Install refused: no valid backing lease (the "no lease, no steering" gate)."""


class NoSuchEntry(KeyError):
    pass


class SteeringTable:
    def __init__(
        self,
        trace: Trace,
        ids,
        lease_is_valid: Callable[[int, SimTime], bool],
        gated: bool,
    ):
        self.trace = trace
        self.ids = ids
        self.lease_is_valid = lease_is_valid
        self.gated = gated
        self.entries: dict[int, list[SteeringEntry]] = {}  # aisi -> priority-desc list
        self.tripwire_hits: list[SteeringEntry] = []

    # -- install / remove ----------------------------------------------------

    def install_steering(
        self, lease: Commit, aist: int, priority: int, now: SimTime
    ) -> SteeringEntry:
        if self.gated and not lease.is_valid_at(now):
            raise LeaseInvalid(f"lease {lease.lease_id} not valid at {now}")
        return self._install(
            lease.aisi, aist, lease.anchor_id, lease.qos, lease.lease_id, priority, now
        )

    def install_unbacked(
        self, aisi: int, aist: int, anchor_id: str, qos: QosBinding, priority: int, now: SimTime
    ) -> SteeringEntry:
        """Baseline path: entry carries the ungated sentinel instead of a lease."""
        return self._install(aisi, aist, anchor_id, qos, UNGATED, priority, now)

    def _install(
        self,
        aisi: int,
        aist: int,
        anchor_id: str,
        qos: QosBinding,
        backing: int,
        priority: int,
        now: SimTime,
    ) -> SteeringEntry:
        bucket = self.entries.setdefault(aisi, [])
        if any(e.priority == priority for e in bucket):
            raise AssertionError(f"aisi {aisi}: duplicate priority {priority}")
        entry = SteeringEntry(
            entry_id=self.ids.take(),
            aisi=aisi,
            aist=aist,
            anchor_id=anchor_id,
            qos=qos,
            backing_lease=backing,
            priority=priority,
            installed_at=now,
        )
        bucket.append(entry)
        bucket.sort(key=lambda e: -e.priority)
        self.trace.append(
            now,
            "steer_install",
            entry=entry.entry_id,
            aisi=aisi,
            anchor=anchor_id,
            lease=backing,
            prio=priority,
        )
        return entry

    def remove_steering(self, lease_id: int, now: SimTime, reason: str) -> int:
        """Remove every entry backed by lease_id; idempotent."""
        victims = [
            e for bucket in self.entries.values() for e in bucket if e.backing_lease == lease_id
        ]
        for entry in victims:
            self._remove(entry, now, reason)
        return len(victims)

    def remove_for(
        self, aisi: int, now: SimTime, reason: str, anchor_id: Optional[str] = None
    ) -> int:
        victims = [
            e
            for e in self.entries.get(aisi, [])
            if anchor_id is None or e.anchor_id == anchor_id
        ]
        for entry in victims:
            self._remove(entry, now, reason)
        return len(victims)

    def _remove(self, entry: SteeringEntry, now: SimTime, reason: str) -> None:
        self.entries[entry.aisi].remove(entry)
        if not self.entries[entry.aisi]:
            del self.entries[entry.aisi]
        self.trace.append(
            now,
            "steer_remove",
            entry=entry.entry_id,
            aisi=entry.aisi,
            anchor=entry.anchor_id,
            lease=entry.backing_lease,
            reason=reason,
        )

    # -- relocation flip -------------------------------------------------------

    def flip_priority(self, aisi: int, new_lease_id: int, now: SimTime) -> None:
        """Make the entry backed by new_lease_id the unique highest priority.

        One event, one timestamp: no intermediate state is observable.
        """
        bucket = self.entries.get(aisi, [])
        promoted = next((e for e in bucket if e.backing_lease == new_lease_id), None)
        if promoted is None:
            raise NoSuchEntry(f"aisi {aisi}: no entry backed by lease {new_lease_id}")
        demoted = next(
            (e for e in bucket if e is not promoted and e.priority >= promoted.priority), None
        )
        if demoted is not None:
            promoted.priority, demoted.priority = demoted.priority, promoted.priority
        bucket.sort(key=lambda e: -e.priority)
        self.trace.append(
            now,
            "steer_flip",
            aisi=aisi,
            entry_up=promoted.entry_id,
            entry_down=demoted.entry_id if demoted is not None else 0,
        )

    # -- classification ----------------------------------------------------------

    def classify(
        self, aisi: int, aist: int, now: SimTime
    ) -> Optional[tuple[str, QosBinding, SteeringEntry]]:
        """Deterministic lookup: highest-priority entry matching (aisi, aist)."""
        for entry in self.entries.get(aisi, []):
            if entry.aist != aist:
                continue
            if self.gated and entry.backing_lease != UNGATED:
                if not self.lease_is_valid(entry.backing_lease, now):
                    self.tripwire_hits.append(entry)
                    self.trace.append(
                        now,
                        "tripwire",
                        entry=entry.entry_id,
                        aisi=aisi,
                        anchor=entry.anchor_id,
                        lease=entry.backing_lease,
                    )
                    return None
            return entry.anchor_id, entry.qos, entry
        return None

    def entries_for(self, aisi: int) -> list[SteeringEntry]:
        return list(self.entries.get(aisi, []))

    def all_entries(self) -> list[SteeringEntry]:
        return [e for bucket in self.entries.values() for e in bucket]
