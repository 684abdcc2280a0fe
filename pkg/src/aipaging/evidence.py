"""Evidence pipeline: audit records bound to identity and lease state.

Record classes nest across modes (minimal ⊂ per-event ⊂ per-request), so
record counts are monotone in the mode for any fixed trace. Above the
overload threshold, capacity- and health-caused admission rejects escalate
into the minimal stream; higher thresholds therefore never add records.
"""

from __future__ import annotations

from .model import EviKind, EviRecord, EvidenceMode, RejectCause, SimTime, UNGATED
from .trace import Trace

_ALWAYS = frozenset({EviKind.RELOCATION, EviKind.LEASE_EXPIRY, EviKind.LEASE_REVOCATION, EviKind.VIOLATION})
_ESCALATABLE_CAUSES = frozenset({RejectCause.CAPACITY, RejectCause.HEALTH})


class EvidenceEmitter:
    def __init__(self, trace: Trace, mode: EvidenceMode, overload_threshold: float):
        self.trace = trace
        self.mode = mode
        self.overload_threshold = overload_threshold
        self.count = 0

    def _should_emit(self, kind: EviKind, cause, load_fraction: float, is_request: bool) -> bool:
        if kind in _ALWAYS:
            return True
        if is_request:
            return self.mode == EvidenceMode.PER_REQUEST
        if self.mode != EvidenceMode.MINIMAL:
            return True
        # minimal mode: capacity/health events escalate above the threshold
        return (
            kind == EviKind.ADMISSION_REJECT
            and cause in _ESCALATABLE_CAUSES
            and load_fraction > self.overload_threshold
        )

    def emit(
        self,
        now: SimTime,
        kind: EviKind,
        aisi: int,
        lease_refs: tuple[int, ...],
        anchor_id: str,
        tier_id: str,
        *,
        cause: RejectCause | None = None,
        load_fraction: float = 0.0,
        is_request: bool = False,
        latency_us: int = 0,
        queue_us: int = 0,
        loss: bool = False,
    ) -> EviRecord | None:
        if not self._should_emit(kind, cause, load_fraction, is_request):
            return None
        refs = lease_refs if lease_refs else (UNGATED,)
        record = EviRecord(
            timestamp=now,
            aisi=aisi,
            lease_refs=refs,
            anchor_id=anchor_id,
            tier_id=tier_id,
            event_kind=kind,
            observables={"latency_us": latency_us, "queue_us": queue_us, "loss": loss},
        )
        self.count += 1
        self.trace.append(
            now,
            "evi",
            kind=kind,
            aisi=aisi,
            leases="/".join(str(r) for r in refs),
            anchor=anchor_id,
            tier=tier_id,
            latency_us=latency_us,
            queue_us=queue_us,
            loss=loss,
        )
        return record
