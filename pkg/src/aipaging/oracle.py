"""Post-hoc invariant auditor: replays a trace file and re-derives the
safety properties without touching any live module state.

Checked: the lease gate (no steering without a valid lease), make-before-
break ordering with a valid target lease at flip, the bounded drain
overlap, identity stability, the admission time bound, terminal-state
absorption, expiry/removal timestamp equality, and that failed
relocations leave steering untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import TraceIncomplete, index_trace, subtract, union
from .model import UNGATED
from .trace import TraceEntry

LEASE_GATE = "lease-gate"
LATE_REMOVAL = "late-removal"
FLIP_BEFORE_INSTALL = "flip-before-install"
RELEASE_BEFORE_FLIP = "release-before-flip"
NEW_LEASE_INVALID = "new-lease-invalid-at-flip"
OVERLAP_EXCEEDED = "overlap-exceeded"
AISI_REISSUE = "aisi-reissue"
POST_TIMEOUT_ATTEMPT = "post-timeout-attempt"
DOUBLE_TERMINAL = "double-terminal"
FAILED_RELOC_MUTATION = "failed-reloc-mutation"
LATE_EXPIRY = "late-expiry"
DANGLING_REF = "dangling-reference"

_TERMINAL_CATS = ("lease_expired", "lease_revoked", "lease_released")


@dataclass(frozen=True)
class Violation:
    kind: str
    time_us: int
    detail: str

    def __str__(self) -> str:
        return f"[{self.kind}] t={self.time_us}us {self.detail}"


def oracle_check(entries: list[TraceEntry]) -> list[Violation]:
    """Brute-force replay of the trace alone; empty list = conforming run."""
    idx = index_trace(entries)
    out: list[Violation] = []
    gated = idx.policy == "aipaging"

    # (f) terminal absorption, and leases never outliving their expiry
    terminals: dict[int, list[TraceEntry]] = {}
    for e in idx.entries:
        if e.category in _TERMINAL_CATS:
            terminals.setdefault(e.get_int("lease"), []).append(e)
    for lease_id, events in sorted(terminals.items()):
        if lease_id not in idx.leases:
            out.append(Violation(DANGLING_REF, events[0].time_us, f"terminal for unknown lease {lease_id}"))
            continue
        if len(events) > 1:
            out.append(
                Violation(
                    DOUBLE_TERMINAL,
                    events[1].time_us,
                    f"lease {lease_id} has {len(events)} terminal transitions",
                )
            )
    for lease in idx.leases.values():
        if lease.terminal_at >= 0 and lease.terminal_at > lease.expires_at:
            out.append(
                Violation(
                    LATE_EXPIRY,
                    lease.terminal_at,
                    f"lease {lease.lease_id} terminal at {lease.terminal_at} after expiry {lease.expires_at}",
                )
            )

    # (a) the lease gate, via exact interval algebra
    if gated:
        for w in idx.entry_windows.values():
            base = w.interval(idx.horizon_us)
            if base[0] >= base[1]:
                continue
            if w.backing_lease == UNGATED:
                out.append(
                    Violation(LEASE_GATE, w.installed_at, f"entry {w.entry_id} installed ungated")
                )
                continue
            lease = idx.leases.get(w.backing_lease)
            valid = [lease.validity(idx.horizon_us)] if lease else []
            bad = subtract(base, valid)
            for start, end in union(bad):
                out.append(
                    Violation(
                        LEASE_GATE,
                        start,
                        f"entry {w.entry_id} steered {end - start}us without valid lease {w.backing_lease}",
                    )
                )
        for e in idx.entries:
            if e.category == "tripwire":
                out.append(
                    Violation(
                        LEASE_GATE, e.time_us, f"classify tripwire hit entry {e.get('entry')}"
                    )
                )

    # (g) lease terminal transition and steering removal share one timestamp
    for lease_id, events in sorted(terminals.items()):
        if lease_id not in idx.leases:
            continue
        t_term = events[0].time_us
        for w in idx.entry_windows.values():
            if w.backing_lease != lease_id or w.installed_at > t_term:
                continue
            removed = w.removed_at if w.removed_at >= 0 else idx.horizon_us
            if removed > t_term:
                out.append(
                    Violation(
                        LATE_REMOVAL,
                        t_term,
                        f"entry {w.entry_id} removed at {removed}, lease {lease_id} terminal at {t_term}",
                    )
                )

    # (d) identity stability
    aisi_owner: dict[int, str] = {}
    session_aisi: dict[str, int] = {}
    for e in idx.entries:
        if e.category != "session_start":
            continue
        label = e.get("session", "")
        aisi = e.get_int("aisi")
        if aisi in aisi_owner and aisi_owner[aisi] != label:
            out.append(
                Violation(
                    AISI_REISSUE,
                    e.time_us,
                    f"aisi {aisi} re-issued to {label}, already bound to {aisi_owner[aisi]}",
                )
            )
        if label in session_aisi and session_aisi[label] != aisi:
            out.append(
                Violation(
                    AISI_REISSUE,
                    e.time_us,
                    f"session {label} re-identified: aisi {session_aisi[label]} -> {aisi}",
                )
            )
        aisi_owner.setdefault(aisi, label)
        session_aisi.setdefault(label, aisi)

    # (e) the admission time bound
    txn_start: dict[str, tuple[int, int]] = {}
    for e in idx.entries:
        if e.category == "txn_start":
            txn_start[e.get("txn", "")] = (e.time_us, int(e.get("t_c_us", "0") or 0))
        elif e.category == "txn_attempt":
            label = e.get("txn", "")
            if label not in txn_start:
                out.append(Violation(DANGLING_REF, e.time_us, f"attempt for unknown txn {label}"))
                continue
            started, t_c = txn_start[label]
            if t_c > 0 and e.time_us - started > t_c:
                out.append(
                    Violation(
                        POST_TIMEOUT_ATTEMPT,
                        e.time_us,
                        f"txn {label} attempt at +{e.time_us - started}us exceeds T_C={t_c}us",
                    )
                )

    # (b)/(c) make-before-break and the bounded overlap, per leased relocation
    t_d = int(idx.meta.get("t_d_us", "0") or 0)
    for e in idx.entries:
        if e.category != "reloc_flip":
            continue
        flip_t = e.time_us
        old_lease = e.get_int("old_lease")
        new_lease = e.get_int("new_lease")
        installs = [
            w for w in idx.entry_windows.values() if w.backing_lease == new_lease
        ]
        if not installs or min(w.installed_at for w in installs) > flip_t:
            out.append(
                Violation(
                    FLIP_BEFORE_INSTALL,
                    flip_t,
                    f"flip to lease {new_lease} precedes its steering install",
                )
            )
        lease = idx.leases.get(new_lease)
        if lease is None:
            out.append(Violation(DANGLING_REF, flip_t, f"flip to unknown lease {new_lease}"))
        else:
            v0, v1 = lease.validity(idx.horizon_us)
            if not (v0 <= flip_t < v1):
                out.append(
                    Violation(
                        NEW_LEASE_INVALID,
                        flip_t,
                        f"lease {new_lease} not valid at flip ({v0}..{v1})",
                    )
                )
        old_windows = [
            w
            for w in idx.entry_windows.values()
            if w.backing_lease == old_lease and w.installed_at <= flip_t
        ]
        if old_windows:
            teardown = min(
                (w.removed_at if w.removed_at >= 0 else idx.horizon_us) for w in old_windows
            )
            if teardown <= flip_t:
                out.append(
                    Violation(
                        RELEASE_BEFORE_FLIP,
                        teardown,
                        f"old path (lease {old_lease}) torn down at {teardown}, flip at {flip_t}",
                    )
                )
            elif t_d > 0 and teardown - flip_t > t_d:
                out.append(
                    Violation(
                        OVERLAP_EXCEEDED,
                        teardown,
                        f"post-flip overlap {teardown - flip_t}us exceeds T_D={t_d}us",
                    )
                )

    # failed relocations must not change the steering set (expiry removals excluded)
    out.extend(_check_failed_relocations(idx))

    out.sort(key=lambda v: (v.time_us, v.kind))
    return out


def _check_failed_relocations(idx) -> list[Violation]:
    jobs_started: dict[str, tuple[int, int, set[int]]] = {}  # job -> (aisi, t, alive snapshot)
    alive: dict[int, set[int]] = {}  # aisi -> entry ids
    removal_reason: dict[int, str] = {}
    out: list[Violation] = []
    for e in idx.entries:
        cat = e.category
        if cat == "steer_install":
            alive.setdefault(e.get_int("aisi"), set()).add(e.get_int("entry"))
        elif cat == "steer_remove":
            aisi = e.get_int("aisi")
            entry = e.get_int("entry")
            alive.get(aisi, set()).discard(entry)
            removal_reason[entry] = e.get("reason", "")
        elif cat == "reloc_start":
            job = e.get("job", "")
            aisi = e.get_int("aisi")
            jobs_started[job] = (aisi, e.time_us, set(alive.get(aisi, set())))
        elif cat == "reloc_failed":
            job = e.get("job", "")
            if job not in jobs_started:
                continue
            aisi, t0, before = jobs_started.pop(job)
            after = set(alive.get(aisi, set()))
            added = after - before
            removed = {
                entry for entry in before - after if removal_reason.get(entry) != "expiry"
            }
            if added or removed:
                out.append(
                    Violation(
                        FAILED_RELOC_MUTATION,
                        e.time_us,
                        f"job {job}: failed relocation changed steering (added={sorted(added)}, removed={sorted(removed)})",
                    )
                )
    return out
