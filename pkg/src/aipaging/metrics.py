"""Trace-derived metrics: continuity, robustness, evidence and the
time-weighted enforcement-without-lease violation rate.

Everything here consumes only trace entries, never live module state.
The interval algebra for the violation rate has an independent 1 ms
sampling oracle (violation_rate_sampled) used to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

from .model import UNGATED, US_PER_MS, US_PER_S
from .trace import TraceEntry

Interval = tuple[int, int]  # [start, end) in us


class TraceIncomplete(ValueError):
    pass


# -- interval helpers ---------------------------------------------------------


def union(intervals: list[Interval]) -> list[Interval]:
    merged: list[Interval] = []
    for start, end in sorted(i for i in intervals if i[0] < i[1]):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def subtract(base: Interval, holes: list[Interval]) -> list[Interval]:
    out: list[Interval] = []
    cursor, end = base
    for h_start, h_end in union(holes):
        if h_end <= cursor or h_start >= end:
            continue
        if h_start > cursor:
            out.append((cursor, h_start))
        cursor = max(cursor, h_end)
        if cursor >= end:
            break
    if cursor < end:
        out.append((cursor, end))
    return out


def total(intervals: list[Interval]) -> int:
    return sum(end - start for start, end in intervals)


# -- trace digestion -----------------------------------------------------------


@dataclass
class LeaseWindow:
    lease_id: int
    aisi: int
    anchor_id: str
    issued_at: int
    expires_at: int
    terminal_at: int = -1  # -1 = no terminal entry seen

    def validity(self, horizon_us: int) -> Interval:
        end = self.terminal_at if self.terminal_at >= 0 else min(self.expires_at, horizon_us)
        return (self.issued_at, min(end, horizon_us))


@dataclass
class EntryWindow:
    entry_id: int
    aisi: int
    anchor_id: str
    backing_lease: int
    installed_at: int
    removed_at: int = -1

    def interval(self, horizon_us: int) -> Interval:
        end = self.removed_at if self.removed_at >= 0 else horizon_us
        return (self.installed_at, min(end, horizon_us))


@dataclass
class TraceIndex:
    meta: dict[str, str]
    horizon_us: int
    sessions: int
    leases: dict[int, LeaseWindow]
    entry_windows: dict[int, EntryWindow]
    entries: list[TraceEntry]

    @property
    def policy(self) -> str:
        return self.meta.get("policy", "")


def index_trace(entries: list[TraceEntry]) -> TraceIndex:
    if not entries or entries[0].category != "meta":
        raise TraceIncomplete("trace does not start with a meta entry")
    meta = dict(entries[0].fields)
    try:
        horizon = int(meta["horizon_us"])
        sessions = int(meta["sessions"])
    except (KeyError, ValueError) as exc:
        raise TraceIncomplete(f"meta entry incomplete: {exc}") from exc
    leases: dict[int, LeaseWindow] = {}
    windows: dict[int, EntryWindow] = {}
    for e in entries:
        if e.category == "lease_issued":
            lease_id = e.get_int("lease")
            leases[lease_id] = LeaseWindow(
                lease_id=lease_id,
                aisi=e.get_int("aisi"),
                anchor_id=e.get("anchor", ""),
                issued_at=e.time_us,
                expires_at=e.get_int("expires_us"),
            )
        elif e.category in ("lease_expired", "lease_revoked", "lease_released"):
            lease_id = e.get_int("lease")
            if lease_id in leases and leases[lease_id].terminal_at < 0:
                leases[lease_id].terminal_at = e.time_us
        elif e.category == "steer_install":
            entry_id = e.get_int("entry")
            windows[entry_id] = EntryWindow(
                entry_id=entry_id,
                aisi=e.get_int("aisi"),
                anchor_id=e.get("anchor", ""),
                backing_lease=e.get_int("lease"),
                installed_at=e.time_us,
            )
        elif e.category == "steer_remove":
            entry_id = e.get_int("entry")
            if entry_id in windows and windows[entry_id].removed_at < 0:
                windows[entry_id].removed_at = e.time_us
    return TraceIndex(meta, horizon, sessions, leases, windows, entries)


# -- violation rate ------------------------------------------------------------


def _entry_violation_intervals(idx: TraceIndex, window: EntryWindow) -> list[Interval]:
    base = window.interval(idx.horizon_us)
    if base[0] >= base[1]:
        return []
    if window.backing_lease != UNGATED:
        lease = idx.leases.get(window.backing_lease)
        valid = [lease.validity(idx.horizon_us)] if lease else []
    else:
        valid = [
            lw.validity(idx.horizon_us)
            for lw in idx.leases.values()
            if lw.aisi == window.aisi and lw.anchor_id == window.anchor_id
        ]
    return subtract(base, valid)


def compute_violation_rate(entries: list[TraceEntry], horizon_us: int | None = None) -> float:
    """Time-weighted percentage of steering-without-valid-lease, exact
    integer interval algebra with per-identity de-overlapping."""
    idx = index_trace(entries)
    if horizon_us is None:
        horizon_us = idx.horizon_us
    per_aisi: dict[int, list[Interval]] = {}
    for window in idx.entry_windows.values():
        bad = _entry_violation_intervals(idx, window)
        if bad:
            per_aisi.setdefault(window.aisi, []).extend(bad)
    bad_total = sum(total(union(ivs)) for ivs in per_aisi.values())
    denom = idx.sessions * horizon_us
    if denom == 0:
        return 0.0
    return 100.0 * bad_total / denom


def violation_rate_sampled(entries: list[TraceEntry], step_us: int = US_PER_MS) -> float:
    """Brute-force oracle for the interval algebra: sample every step_us."""
    idx = index_trace(entries)
    by_aisi: dict[int, list[EntryWindow]] = {}
    for w in idx.entry_windows.values():
        by_aisi.setdefault(w.aisi, []).append(w)
    validity: dict[int, Interval] = {
        lid: lw.validity(idx.horizon_us) for lid, lw in idx.leases.items()
    }
    ungated_valid: dict[tuple[int, str], list[Interval]] = {}
    for lw in idx.leases.values():
        ungated_valid.setdefault((lw.aisi, lw.anchor_id), []).append(validity[lw.lease_id])
    bad_samples = 0
    n_samples = 0
    for t in range(0, idx.horizon_us, step_us):
        n_samples += 1
        for aisi, windows in by_aisi.items():
            violating = False
            for w in windows:
                start, end = w.interval(idx.horizon_us)
                if not (start <= t < end):
                    continue
                if w.backing_lease != UNGATED:
                    v = validity.get(w.backing_lease)
                    if v is None or not (v[0] <= t < v[1]):
                        violating = True
                        break
                else:
                    ok = any(
                        v[0] <= t < v[1]
                        for v in ungated_valid.get((aisi, w.anchor_id), [])
                    )
                    if not ok:
                        violating = True
                        break
            if violating:
                bad_samples += 1
    denom = idx.sessions * n_samples
    if denom == 0:
        return 0.0
    return 100.0 * bad_samples / denom


# -- steering replay (who served whom, when) -------------------------------------


def serving_anchor_at(idx: TraceIndex, aisi: int, t_us: int) -> str | None:
    """Anchor of the highest-priority entry alive at t, honoring flips."""
    prio: dict[int, int] = {}
    alive: dict[int, EntryWindow] = {}
    flips: list[TraceEntry] = []
    best: tuple[int, int] | None = None
    for e in idx.entries:
        if e.time_us > t_us:
            break
        if e.category == "steer_install" and e.get_int("aisi") == aisi:
            w = idx.entry_windows[e.get_int("entry")]
            alive[w.entry_id] = w
            prio[w.entry_id] = e.get_int("prio")
        elif e.category == "steer_remove" and e.get_int("aisi") == aisi:
            alive.pop(e.get_int("entry"), None)
        elif e.category == "steer_flip" and e.get_int("aisi") == aisi:
            up = e.get_int("entry_up")
            down = e.get_int("entry_down")
            if up in prio and down in prio:
                prio[up], prio[down] = prio[down], prio[up]
    if not alive:
        return None
    top = max(alive.values(), key=lambda w: (prio.get(w.entry_id, 0), -w.entry_id))
    return top.anchor_id


# -- the per-run report -----------------------------------------------------------


@dataclass
class MetricsReport:
    setup: str
    policy: str
    seed: int
    sessions: int
    horizon_us: int
    transaction_time_samples: list[int] = field(default_factory=list)
    request_total: int = 0
    request_failed: int = 0
    request_failure_rate: float = 0.0
    recovery_samples: int = 0
    recovery_successes: int = 0
    recovery_success_probability: float = 1.0
    evidence_records: int = 0
    evidence_traffic_rate: float = 0.0
    violation_rate_percent: float = 0.0
    relocation_count: int = 0
    overlap_mean_us: float = 0.0
    overlap_max_us: int = 0


def compute_report(entries: list[TraceEntry]) -> MetricsReport:
    idx = index_trace(entries)
    meta = idx.meta
    report = MetricsReport(
        setup=meta.get("setup", "?"),
        policy=meta.get("policy", "?"),
        seed=int(meta.get("seed", "0")),
        sessions=idx.sessions,
        horizon_us=idx.horizon_us,
    )
    session_aisi: dict[str, int] = {}
    session_end_at: dict[str, int] = {}
    served_times: dict[str, list[int]] = {}
    failures: list[tuple[int, str]] = []
    overlaps: list[int] = []
    for e in idx.entries:
        cat = e.category
        if cat == "txn_success":
            report.transaction_time_samples.append(e.get_int("elapsed_us"))
        elif cat == "session_start":
            session_aisi[e.get("session", "")] = e.get_int("aisi")
        elif cat == "session_end":
            session_end_at[e.get("session", "")] = e.time_us
        elif cat == "req_outcome":
            if e.get("final") != "1":
                continue
            if e.get("reason") == "horizon":
                continue
            report.request_total += 1
            if e.get("outcome") == "served":
                served_times.setdefault(e.get("session", ""), []).append(e.time_us)
            else:
                report.request_failed += 1
        elif cat == "inject" and e.get("kind") == "anchor_fail":
            failures.append((e.time_us, e.get("anchor", "")))
        elif cat == "reloc_success":
            report.relocation_count += 1
            if e.get_int("old_lease") != UNGATED:
                overlaps.append(e.get_int("overlap_us"))
        elif cat == "evi":
            report.evidence_records += 1

    if report.request_total:
        report.request_failure_rate = report.request_failed / report.request_total
    if overlaps:
        report.overlap_mean_us = sum(overlaps) / len(overlaps)
        report.overlap_max_us = max(overlaps)
    report.evidence_traffic_rate = report.evidence_records / (idx.horizon_us / US_PER_S)
    report.violation_rate_percent = compute_violation_rate(entries)

    window_us = int(meta.get("recovery_window_us", 2 * US_PER_S))
    for t_fail, anchor_id in failures:
        for label, aisi in session_aisi.items():
            if label in session_end_at and session_end_at[label] <= t_fail:
                continue
            if serving_anchor_at(idx, aisi, t_fail) != anchor_id:
                continue
            report.recovery_samples += 1
            recovered = any(
                t_fail < t <= t_fail + window_us for t in served_times.get(label, [])
            )
            if recovered:
                report.recovery_successes += 1
    if report.recovery_samples:
        report.recovery_success_probability = report.recovery_successes / report.recovery_samples
    return report


# -- aggregation across seeds -------------------------------------------------------


def nearest_rank(sorted_values: list, pct: float):
    if not sorted_values:
        raise ValueError("empty sample")
    rank = max(1, ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


SUMMARY_METRICS = (
    "txn_p50_ms",
    "request_failure_rate",
    "recovery_success_probability",
    "evidence_traffic_rate",
    "violation_rate_percent",
    "relocation_count",
    "overlap_mean_ms",
)


def _scalarize(report: MetricsReport) -> dict[str, float]:
    samples = sorted(report.transaction_time_samples)
    return {
        "txn_p50_ms": (nearest_rank(samples, 50) / US_PER_MS) if samples else 0.0,
        "request_failure_rate": report.request_failure_rate,
        "recovery_success_probability": report.recovery_success_probability,
        "evidence_traffic_rate": report.evidence_traffic_rate,
        "violation_rate_percent": report.violation_rate_percent,
        "relocation_count": float(report.relocation_count),
        "overlap_mean_ms": report.overlap_mean_us / US_PER_MS,
    }


@dataclass
class AggregateSummary:
    count: int
    metrics: dict[str, dict[str, float]]
    txn_cdf: list[tuple[float, float]]  # (latency_ms, cumulative_fraction)

    def mean(self, metric: str) -> float:
        return self.metrics[metric]["mean"]


def aggregate(reports: list[MetricsReport]) -> AggregateSummary:
    """Seed-pool summary: mean and nearest-rank p50/p90/p99 per metric,
    plus CDF points over the pooled transaction-time samples."""
    if not reports:
        raise ValueError("empty-input: no reports to aggregate")
    rows = [_scalarize(r) for r in reports]
    metrics: dict[str, dict[str, float]] = {}
    for key in SUMMARY_METRICS:
        values = sorted(row[key] for row in rows)
        metrics[key] = {
            "mean": sum(values) / len(values),
            "p50": nearest_rank(values, 50),
            "p90": nearest_rank(values, 90),
            "p99": nearest_rank(values, 99),
        }
    pooled = sorted(t for r in reports for t in r.transaction_time_samples)
    cdf = [
        (value / US_PER_MS, (i + 1) / len(pooled))
        for i, value in enumerate(pooled)
    ]
    return AggregateSummary(count=len(reports), metrics=metrics, txn_cdf=cdf)


# -- CSV serialization -----------------------------------------------------------

METRICS_COLUMNS = (
    "setup",
    "policy",
    "seed",
    "sessions",
    "horizon_ms",
    "transactions",
    "txn_p50_ms",
    "request_total",
    "request_failure_rate",
    "recovery_samples",
    "recovery_success_probability",
    "evidence_records",
    "evidence_traffic_rate",
    "violation_rate_percent",
    "relocation_count",
    "overlap_mean_ms",
    "overlap_max_ms",
)


def metrics_row(report: MetricsReport) -> list[str]:
    samples = sorted(report.transaction_time_samples)
    p50 = (nearest_rank(samples, 50) / US_PER_MS) if samples else 0.0
    return [
        report.setup,
        report.policy,
        str(report.seed),
        str(report.sessions),
        f"{report.horizon_us / US_PER_MS:.3f}",
        str(len(samples)),
        f"{p50:.3f}",
        str(report.request_total),
        f"{report.request_failure_rate:.6f}",
        str(report.recovery_samples),
        f"{report.recovery_success_probability:.6f}",
        str(report.evidence_records),
        f"{report.evidence_traffic_rate:.4f}",
        f"{report.violation_rate_percent:.3f}",
        str(report.relocation_count),
        f"{report.overlap_mean_us / US_PER_MS:.3f}",
        f"{report.overlap_max_us / US_PER_MS:.3f}",
    ]


def write_metrics_csv(path: str, reports: list[MetricsReport]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for report in reports:
            fh.write(",".join(metrics_row(report)) + "\n")


def write_cdf_csv(path: str, reports: list[MetricsReport]) -> None:
    summary = aggregate(reports)
    with open(path, "w", newline="\n") as fh:
        fh.write("latency_ms,cumulative_fraction\n")
        for latency_ms, frac in summary.txn_cdf:
            fh.write(f"{latency_ms:.3f},{frac:.6f}\n")
