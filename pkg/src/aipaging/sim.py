"""Deterministic scenario runner: sessions, anchors, injections, policies.

One run = one event-processing context. Sessions are closed-loop: each
needs a fixed number of served responses, issues the next request one
think-time after the previous outcome, and abandons after a long run of
consecutive failures. Anchors admit by slot (a lease holds a slot; an
ungated session grabs one on first use) and serve admitted work on a
bounded FIFO behind a fixed number of servers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .controller import (
    AdmissionLoop,
    AnchorObservation,
    Candidate,
    OperatorPolicy,
    SessionBehavior,
    Telemetry,
    derive_asp,
    generate_candidates,
    issue_identity,
    select_action,
)
from .enforcement import PRIORITY_ACTIVE, SteeringTable
from .engine import Engine, EventKind, SimEvent
from .evidence import EvidenceEmitter
from .leases import AlreadyTerminal, LeaseTable
from .model import (
    Aisi,
    Aist,
    Anchor,
    Asp,
    Commit,
    EviKind,
    Health,
    IdSource,
    Intent,
    PolicyKind,
    QosBinding,
    SiteClass,
    SimTime,
    UNGATED,
)
from .metrics import MetricsReport, compute_report
from .relocation import (
    JobPhase,
    RelocationJob,
    RelocationRateLimiter,
    RelocationTrigger,
    relocation_candidates,
    should_relocate,
)
from .rng import Stream
from .scenario import ScenarioConfig
from .trace import Trace


@dataclass
class _Req:
    req_id: int
    session: "_Session"
    attempt: int
    issued_at: SimTime
    anchor_id: str = ""
    tier_id: str = ""
    lease_ref: int = UNGATED
    path_us: int = 0
    submit_at: SimTime = 0
    svc_us: int = 0
    cancelled: bool = False
    in_service: bool = False


@dataclass
class _AnchorRuntime:
    anchor: Anchor
    busy: int = 0
    waiting: deque = field(default_factory=deque)
    holders: set = field(default_factory=set)  # aisi of ungated slot holders
    epoch: int = 0


@dataclass
class _TxnRun:
    label: str
    loop: AdmissionLoop
    purpose: str  # "page" | "reloc"
    started_at: SimTime
    job: Optional[RelocationJob] = None
    pending: Optional[Candidate] = None


@dataclass
class _Session:
    index: int
    label: str
    intent: Intent
    behavior: SessionBehavior
    home_region: str
    location: str
    asp: Optional[Asp] = None
    aisi: Optional[Aisi] = None
    aist: Optional[Aist] = None
    serving_lease: Optional[int] = None
    serving_anchor: Optional[str] = None
    ungated_anchor: Optional[str] = None
    ungated_tier: str = ""
    txn: Optional[_TxnRun] = None
    reloc: Optional[_TxnRun] = None
    txn_count: int = 0
    served: int = 0
    failed: int = 0
    consecutive_failures: int = 0
    outstanding: Optional[_Req] = None
    ended: bool = False
    repage_pending: bool = False
    switch_target: Optional[Candidate] = None
    path_overrides: dict = field(default_factory=dict)
    limiter: Optional[RelocationRateLimiter] = None
    think: Optional[Stream] = None
    path_rng: Optional[Stream] = None
    started: bool = False


class InvariantAbort(AssertionError):
    """A runtime self-check failed; the run is not trustworthy."""


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.behavior = select_action(config.policy_kind)
        self.trace = Trace()
        self.ids = IdSource()
        self.engine = Engine()
        self.tiers = {t.tier_id: t for t in config.tiers}
        self.anchors: dict[str, Anchor] = {}
        self.runtime: dict[str, _AnchorRuntime] = {}
        for a in config.anchors:
            anchor = Anchor(
                anchor_id=a.anchor_id,
                site_class=a.site_class,
                region=a.region,
                tiers_offered=a.tiers_offered,
                capacity=a.capacity,
                path_latency_us=a.path_latency_us,
                servers=a.servers,
                health=a.health,
            )
            self.anchors[anchor.anchor_id] = anchor
            self.runtime[anchor.anchor_id] = _AnchorRuntime(anchor)
        regions = frozenset(a.region for a in config.anchors)
        self.policy = OperatorPolicy(
            tier_policy={"*": config.preferred_tiers()},
            regions_served=regions,
            default_lease_duration_us=config.lease_duration_us,
            commit_timeout_us=config.commit_timeout_us,
            drain_timeout_us=config.drain_timeout_us,
            evidence_requirements=config.evidence,
            max_relocation_rate=config.max_relocation_rate,
        )
        self.lease_mgr = LeaseTable(self.anchors, self.trace, self.ids)
        self.steering = SteeringTable(
            self.trace,
            self.ids,
            lease_is_valid=self.lease_mgr.is_valid,
            gated=self.behavior.gates_installs,
        )
        self.evidence = EvidenceEmitter(self.trace, config.evidence, config.overload_threshold)
        self.lease_sessions: dict[int, _Session] = {}
        self.sessions: list[_Session] = []
        self.edge_regions = config.edge_regions()
        self.svc_rng = {a: Stream(config.seed, "service", i) for i, a in enumerate(self.anchors)}
        self.fail_rng = Stream(config.seed, "failure")
        self.stagger_rng = Stream(config.seed, "stagger")
        self.job_ids = IdSource(start=1)

    # ------------------------------------------------------------------ setup

    def run(self) -> tuple[Trace, MetricsReport]:
        cfg = self.config
        self.trace.append(
            0,
            "meta",
            setup=cfg.setup_id,
            policy=cfg.policy_kind,
            seed=cfg.seed,
            horizon_us=cfg.horizon_us,
            sessions=cfg.sessions,
            t_c_us=cfg.commit_timeout_us,
            t_d_us=cfg.drain_timeout_us,
            lease_us=cfg.lease_duration_us,
            recovery_window_us=cfg.recovery_window_us,
            stress=f"{cfg.stress_level:.4f}".replace(".", "p"),
        )
        self._spawn_sessions()
        self._schedule_injections()
        self.engine.run(self._dispatch, cfg.horizon_us)
        self._cut_off_open_requests()
        self.lease_mgr.check_capacity_safety()
        report = compute_report(self.trace.entries)
        return self.trace, report

    def _spawn_sessions(self) -> None:
        cfg = self.config
        for i in range(cfg.sessions):
            home = self.edge_regions[i % len(self.edge_regions)] if self.edge_regions else next(
                iter(self.anchors.values())
            ).region
            intent = Intent(
                outcome_tag="chat",
                target_latency_us=cfg.target_latency_us,
                reliability_target=cfg.reliability_target,
            )
            session = _Session(
                index=i,
                label=f"s{i + 1}",
                intent=intent,
                behavior=self.behavior,
                home_region=home,
                location=home,
                limiter=RelocationRateLimiter(cfg.max_relocation_rate),
                think=Stream(cfg.seed, "think", i),
                path_rng=Stream(cfg.seed, "path", i),
            )
            self.sessions.append(session)
            start = i * cfg.session_stagger_us + self.stagger_rng.uniform_us(
                0, cfg.session_stagger_us // 2
            )
            self.engine.schedule(start, SimEvent(EventKind.SESSION_START, {"session": session}))

    def _schedule_injections(self) -> None:
        cfg = self.config
        for spec in cfg.failure_schedule:
            kind = EventKind.ANCHOR_FAIL if spec.kind == "hard" else EventKind.HEALTH_CHANGE
            self.engine.schedule(
                spec.at_us, SimEvent(kind, {"anchor": spec.anchor_id, "health": Health.DEGRADED})
            )
            if spec.recover_after_us > 0:
                self.engine.schedule(
                    spec.at_us + spec.recover_after_us,
                    SimEvent(EventKind.ANCHOR_RECOVER, {"anchor": spec.anchor_id}),
                )
        interval = cfg.effective_failure_interval_us()
        if interval > 0:
            first = round(interval * (0.75 + 0.5 * self.fail_rng.uniform()))
            self.engine.schedule(first, SimEvent(EventKind.ANCHOR_FAIL, {"generated": True}))
        if cfg.overload_at_us > 0:
            self.engine.schedule(cfg.overload_at_us, SimEvent(EventKind.CAPACITY_CHANGE, {}))

    # ------------------------------------------------------------------ dispatch

    def _dispatch(self, event: SimEvent) -> None:
        now = self.engine.now
        kind = event.kind
        p = event.payload
        if kind == EventKind.SESSION_START:
            self._on_session_start(p["session"], now)
        elif kind == EventKind.REQUEST_ARRIVAL:
            self._on_request_arrival(p["session"], p["req_id"], p["attempt"], now)
        elif kind == EventKind.SERVICE_DONE:
            self._on_service_done(p["anchor"], p["req"], p["epoch"], now)
        elif kind == EventKind.ADMISSION_REPLY:
            self._on_admission_reply(p["session"], p["txn"], now)
        elif kind == EventKind.LEASE_EXPIRY:
            self._on_lease_expiry(now)
        elif kind == EventKind.RENEWAL_DUE:
            self._on_renewal_due(p["session"], p["lease"], now)
        elif kind == EventKind.DRAIN_DEADLINE:
            self._on_drain_deadline(p["session"], p["job"], now)
        elif kind == EventKind.REPAGE_DUE:
            self._on_repage_due(p["session"], now)
        elif kind == EventKind.SWITCH_DONE:
            self._on_switch_done(p["session"], now, p.get("label", ""))
        elif kind == EventKind.PATH_CHANGE:
            self._on_path_change(p["session"], now)
        elif kind == EventKind.HEALTH_CHANGE:
            self._on_health_change(p["anchor"], p["health"], now)
        elif kind == EventKind.CAPACITY_CHANGE:
            self._on_capacity_change(now)
        elif kind == EventKind.ANCHOR_FAIL:
            self._on_anchor_fail(p, now)
        elif kind == EventKind.ANCHOR_RECOVER:
            self._on_anchor_recover(p["anchor"], now)
        else:  # pragma: no cover
            raise InvariantAbort(f"unhandled event kind {kind}")

    # ------------------------------------------------------------------ sessions

    def _on_session_start(self, session: _Session, now: SimTime) -> None:
        cfg = self.config
        session.started = True
        session.asp = derive_asp(session.intent, self.policy)
        session.aisi, session.aist = issue_identity(session.asp, now, self.ids)
        self.trace.append(
            now,
            "session_start",
            session=session.label,
            aisi=session.aisi.id,
            aist=session.aist.token_id,
            region=session.home_region,
            target_us=session.intent.target_latency_us,
        )
        if session.behavior.uses_leases:
            self._start_page(session, now)
        else:
            self._start_placement(session, now)
        # the service handle comes back with the placement reply, one
        # control round trip away; only then can the app start asking
        think = session.think.exponential_us(cfg.think_mean_us())
        self._schedule_request(session, now + cfg.admission_delay_us + think)
        self.engine.schedule(
            now + cfg.path_change_interval_us, SimEvent(EventKind.PATH_CHANGE, {"session": session})
        )

    def _end_session(self, session: _Session, reason: str, now: SimTime) -> None:
        session.ended = True
        self.trace.append(
            now,
            "session_end",
            session=session.label,
            reason=reason,
            served=session.served,
            failed=session.failed,
        )
        self.steering.remove_for(session.aisi.id, now, reason="session_end")
        self._release_slot(session)
        if session.serving_lease is not None:
            try:
                self.lease_mgr.release(session.serving_lease, now)
            except AlreadyTerminal:
                pass
            self.steering.remove_steering(session.serving_lease, now, reason="session_end")
            session.serving_lease = None

    # ------------------------------------------------------------------ telemetry

    def _telemetry_for(self, session: _Session) -> Telemetry:
        out: Telemetry = {}
        for anchor_id, anchor in self.anchors.items():
            rt = self.runtime[anchor_id]
            occupancy = self.lease_mgr.anchor_usage[anchor_id] + len(rt.holders)
            load = occupancy / anchor.capacity if anchor.capacity > 0 else 1.0
            path = session.path_overrides.get(anchor_id, anchor.path_latency_us)
            reachable = anchor.site_class == SiteClass.CLOUD or anchor.region == session.location
            out[anchor_id] = AnchorObservation(
                path_latency_us=path, load_fraction=load, reachable=reachable
            )
        return out

    def _load_fraction(self, anchor_id: str) -> float:
        anchor = self.anchors[anchor_id]
        rt = self.runtime[anchor_id]
        occupancy = self.lease_mgr.anchor_usage[anchor_id] + len(rt.holders)
        return occupancy / anchor.capacity if anchor.capacity > 0 else 1.0

    # ------------------------------------------------------------------ paging (leased placement)

    def _start_page(self, session: _Session, now: SimTime) -> None:
        session.txn_count += 1
        label = f"{session.label}-t{session.txn_count}"
        candidates = generate_candidates(
            session.asp, self.anchors, self._telemetry_for(session), self.tiers
        )
        loop = AdmissionLoop(
            session.asp, session.aisi, candidates, self.policy.commit_timeout_us, now
        )
        txn = _TxnRun(label=label, loop=loop, purpose="page", started_at=now)
        session.txn = txn
        self.trace.append(
            now, "txn_start", txn=label, aisi=session.aisi.id, t_c_us=self.policy.commit_timeout_us
        )
        self._next_attempt(session, txn, now)

    def _next_attempt(self, session: _Session, txn: _TxnRun, now: SimTime) -> None:
        candidate = txn.loop.next_attempt(now)
        if candidate is None:
            self._finish_txn_reject(session, txn, now)
            return
        txn.pending = candidate
        self.trace.append(
            now,
            "txn_attempt",
            txn=txn.label,
            n=txn.loop.attempts,
            anchor=candidate.anchor_id,
            tier=candidate.tier.tier_id,
            score_us=round(candidate.score),
        )
        self.engine.schedule(
            now + self.config.admission_delay_us,
            SimEvent(EventKind.ADMISSION_REPLY, {"session": session, "txn": txn}),
        )

    def _on_admission_reply(self, session: _Session, txn: _TxnRun, now: SimTime) -> None:
        if session.ended:
            return
        candidate = txn.pending
        txn.pending = None
        qos = QosBinding("interactive", session.asp.target_latency_us)
        result = self.lease_mgr.request_lease(
            candidate.anchor_id, candidate.tier.tier_id, qos, session.aisi.id, session.asp, now
        )
        if isinstance(result, Commit):
            self.trace.append(now, "txn_reply", txn=txn.label, anchor=candidate.anchor_id, accept=1)
            if txn.purpose == "page":
                self._complete_page(session, txn, result, now)
            else:
                self._complete_reloc_admission(session, txn, result, now)
            return
        self.trace.append(
            now, "txn_reply", txn=txn.label, anchor=candidate.anchor_id, accept=0, cause=result
        )
        self.evidence.emit(
            now,
            EviKind.ADMISSION_REJECT,
            session.aisi.id,
            (UNGATED,),
            candidate.anchor_id,
            candidate.tier.tier_id,
            cause=result,
            load_fraction=self._load_fraction(candidate.anchor_id),
        )
        txn.loop.on_reject(result, self.anchors, self._telemetry_for(session), self.tiers)
        self._next_attempt(session, txn, now)

    def _complete_page(self, session: _Session, txn: _TxnRun, lease: Commit, now: SimTime) -> None:
        self.steering.install_steering(lease, session.aist.token_id, PRIORITY_ACTIVE, now)
        session.serving_lease = lease.lease_id
        session.serving_anchor = lease.anchor_id
        session.txn = None
        elapsed = now - txn.started_at
        self.trace.append(now, "txn_success", txn=txn.label, lease=lease.lease_id, elapsed_us=elapsed)
        self.evidence.emit(
            now,
            EviKind.SERVE,
            session.aisi.id,
            (lease.lease_id,),
            lease.anchor_id,
            lease.tier_id,
            latency_us=elapsed,
        )
        self._register_lease(session, lease)

    def _finish_txn_reject(self, session: _Session, txn: _TxnRun, now: SimTime) -> None:
        causes = ",".join(
            f"{c.value}:{n}"
            for c, n in sorted(txn.loop.causes.histogram.items(), key=lambda kv: kv[0].value)
        ) or "none"
        if txn.purpose == "page":
            session.txn = None
            self.trace.append(
                now, "txn_reject", txn=txn.label, causes=causes, elapsed_us=now - txn.started_at
            )
            self._schedule_repage(session, now)
        else:
            job = txn.job
            cause = "admission-timeout" if txn.loop.timed_out else "no-feasible-target"
            job.fail(cause, self.steering, now)
            session.reloc = None
            self.trace.append(now, "reloc_failed", job=job.job_id, aisi=session.aisi.id, cause=cause)

    def _schedule_repage(self, session: _Session, now: SimTime) -> None:
        if session.ended or session.repage_pending or not session.behavior.uses_leases:
            return
        session.repage_pending = True
        delay = self.config.repage_backoff_us + session.path_rng.uniform_us(
            0, self.config.repage_backoff_us // 4
        )
        self.engine.schedule(now + delay, SimEvent(EventKind.REPAGE_DUE, {"session": session}))

    def _on_repage_due(self, session: _Session, now: SimTime) -> None:
        session.repage_pending = False
        if session.ended or session.txn is not None or session.reloc is not None:
            return
        if session.serving_lease is not None:
            return
        self._start_page(session, now)

    def _register_lease(self, session: _Session, lease: Commit) -> None:
        self.lease_sessions[lease.lease_id] = session
        self.engine.schedule(lease.expires_at, SimEvent(EventKind.LEASE_EXPIRY, {"lease": lease.lease_id}))
        if session.behavior.renews:
            lead = self.config.lease_duration_us // 5
            self.engine.schedule(
                max(lease.issued_at, lease.expires_at - lead),
                SimEvent(EventKind.RENEWAL_DUE, {"session": session, "lease": lease.lease_id}),
            )

    def _on_renewal_due(self, session: _Session, lease_id: int, now: SimTime) -> None:
        if session.ended or session.serving_lease != lease_id or session.reloc is not None:
            return
        if not self.lease_mgr.is_valid(lease_id, now):
            return
        result = self.lease_mgr.renew(lease_id, session.asp, now)
        if not isinstance(result, Commit):
            return  # expiry will remove state; the session re-pages on no-route
        self.steering.remove_steering(lease_id, now, reason="renewal")
        self.steering.install_steering(result, session.aist.token_id, PRIORITY_ACTIVE, now)
        session.serving_lease = result.lease_id
        self._register_lease(session, result)

    def _on_lease_expiry(self, now: SimTime) -> None:
        for lease_id in self.lease_mgr.expire_due(now):
            lease = self.lease_mgr.get(lease_id)
            self.steering.remove_steering(lease_id, now, reason="expiry")
            self.evidence.emit(
                now,
                EviKind.LEASE_EXPIRY,
                lease.aisi,
                (lease_id,),
                lease.anchor_id,
                lease.tier_id,
            )
            session = self.lease_sessions.get(lease_id)
            if session is not None and session.serving_lease == lease_id:
                session.serving_lease = None
                session.serving_anchor = None

    # ------------------------------------------------------------------ ungated placement (baselines)

    def _start_placement(self, session: _Session, now: SimTime) -> None:
        session.txn_count += 1
        label = f"{session.label}-t{session.txn_count}"
        candidates = generate_candidates(
            session.asp, self.anchors, self._telemetry_for(session), self.tiers
        )
        self.trace.append(
            now, "txn_start", txn=label, aisi=session.aisi.id, t_c_us=self.policy.commit_timeout_us
        )
        if not candidates:
            self.trace.append(now, "txn_reject", txn=label, causes="none", elapsed_us=0)
            return
        session.switch_target = candidates[0]
        self.engine.schedule(
            now + self.config.admission_delay_us,
            SimEvent(EventKind.SWITCH_DONE, {"session": session, "label": label}),
        )

    def _on_switch_done(self, session: _Session, now: SimTime, label: str = "") -> None:
        if session.ended or session.switch_target is None:
            return
        target = session.switch_target
        session.switch_target = None
        qos = QosBinding("interactive", session.asp.target_latency_us)
        self.steering.install_unbacked(
            session.aisi.id, session.aist.token_id, target.anchor_id, qos, PRIORITY_ACTIVE, now
        )
        session.serving_anchor = target.anchor_id
        session.ungated_tier = target.tier.tier_id
        if label:
            self.trace.append(
                now,
                "txn_success",
                txn=label,
                lease=UNGATED,
                elapsed_us=self.config.admission_delay_us,
            )

    def _switch_steering(self, session: _Session, trigger: RelocationTrigger, now: SimTime) -> None:
        """Non-transactional move: tear down, then install after one RTT."""
        telemetry = self._telemetry_for(session)
        candidates = [
            c
            for c in generate_candidates(session.asp, self.anchors, telemetry, self.tiers)
            if c.anchor_id != session.serving_anchor
        ]
        if not candidates:
            return
        job_id = self.job_ids.take()
        self.trace.append(
            now,
            "reloc_start",
            job=job_id,
            aisi=session.aisi.id,
            trigger=trigger,
            old_anchor=session.serving_anchor or "-",
        )
        if session.serving_anchor is not None:
            self.steering.remove_for(
                session.aisi.id, now, reason="switch", anchor_id=session.serving_anchor
            )
            self._release_slot(session)
            session.serving_anchor = None
        session.switch_target = candidates[0]
        self.engine.schedule(
            now + self.config.admission_delay_us,
            SimEvent(EventKind.SWITCH_DONE, {"session": session}),
        )
        self.trace.append(
            now,
            "reloc_success",
            job=job_id,
            aisi=session.aisi.id,
            old_lease=UNGATED,
            new_lease=UNGATED,
            overlap_us=0,
        )
        self.evidence.emit(
            now,
            EviKind.RELOCATION,
            session.aisi.id,
            (UNGATED, UNGATED),
            candidates[0].anchor_id,
            candidates[0].tier.tier_id,
        )

    def _release_slot(self, session: _Session) -> None:
        if session.ungated_anchor is not None:
            self.runtime[session.ungated_anchor].holders.discard(session.aisi.id)
            session.ungated_anchor = None

    # ------------------------------------------------------------------ relocation (transactional)

    def _maybe_relocate(self, session: _Session, now: SimTime, hint: bool) -> None:
        if session.ended or not session.behavior.relocates:
            return
        if session.behavior.uses_leases:
            if session.reloc is not None and session.reloc.job.phase == JobPhase.DRAINING:
                # a fresh trigger mid-drain ends the bounded overlap early
                self._complete_drain(session, session.reloc.job, now)
            if session.serving_lease is None or session.reloc is not None or session.txn is not None:
                return
            lease = self.lease_mgr.get(session.serving_lease)
            # Too close to expiry, the renewal/expiry machinery owns the move:
            # guarantees the old lease stays valid through any flip.
            if lease.expires_at - now <= self.policy.commit_timeout_us:
                return
            anchor = self.anchors[lease.anchor_id]
            tier = self.tiers[lease.tier_id]
        else:
            if session.serving_anchor is None or session.switch_target is not None:
                return
            anchor = self.anchors[session.serving_anchor]
            tier = self.tiers.get(session.ungated_tier) or next(iter(self.tiers.values()))
        telemetry = self._telemetry_for(session)
        trigger = should_relocate(
            anchor,
            tier,
            session.asp,
            telemetry,
            self.anchors,
            self.tiers,
            session.limiter,
            now,
            path_change_hint=hint,
        )
        if trigger is None:
            return
        session.limiter.record(now)
        if not session.behavior.uses_leases:
            self._switch_steering(session, trigger, now)
            return
        self._start_relocation(session, trigger, now)

    def _start_relocation(self, session: _Session, trigger: RelocationTrigger, now: SimTime) -> None:
        lease = self.lease_mgr.get(session.serving_lease)
        job = RelocationJob(
            aisi=session.aisi.id,
            aist=session.aist,
            old_lease=lease.lease_id,
            old_anchor=lease.anchor_id,
            trigger=trigger,
            asp=session.asp,
            drain_timeout_us=self.policy.drain_timeout_us,
            job_id=self.job_ids.take(),
        )
        self.trace.append(
            now,
            "reloc_start",
            job=job.job_id,
            aisi=session.aisi.id,
            trigger=trigger,
            old_anchor=lease.anchor_id,
        )
        candidates = relocation_candidates(
            session.asp, self.anchors, self._telemetry_for(session), self.tiers, lease.anchor_id
        )
        job._advance(JobPhase.ADMITTING)
        loop = AdmissionLoop(
            session.asp,
            session.aisi,
            candidates,
            self.policy.commit_timeout_us,
            now,
            exclude_anchor=lease.anchor_id,
        )
        txn = _TxnRun(
            label=f"{session.label}-r{job.job_id}", loop=loop, purpose="reloc", started_at=now, job=job
        )
        session.reloc = txn
        self.trace.append(
            now, "txn_start", txn=txn.label, aisi=session.aisi.id, t_c_us=self.policy.commit_timeout_us
        )
        self._next_attempt(session, txn, now)

    def _complete_reloc_admission(
        self, session: _Session, txn: _TxnRun, lease: Commit, now: SimTime
    ) -> None:
        job = txn.job
        elapsed = now - txn.started_at
        self.trace.append(now, "txn_success", txn=txn.label, lease=lease.lease_id, elapsed_us=elapsed)
        job.on_admitted(lease, self.steering, now)
        if not job.flip(self.steering, self.lease_mgr, now):
            session.reloc = None
            self.trace.append(
                now, "reloc_failed", job=job.job_id, aisi=session.aisi.id, cause=job.fail_cause
            )
            return
        self.trace.append(
            now,
            "reloc_flip",
            job=job.job_id,
            aisi=session.aisi.id,
            old_lease=job.old_lease,
            new_lease=lease.lease_id,
        )
        session.serving_lease = lease.lease_id
        session.serving_anchor = lease.anchor_id
        self._register_lease(session, lease)
        self.engine.schedule(
            job.drain_deadline, SimEvent(EventKind.DRAIN_DEADLINE, {"session": session, "job": job})
        )

    def _on_drain_deadline(self, session: _Session, job: RelocationJob, now: SimTime) -> None:
        if job.phase != JobPhase.DRAINING:
            return
        self._complete_drain(session, job, now)

    def _complete_drain(self, session: _Session, job: RelocationJob, now: SimTime) -> None:
        job.finish_drain(self.steering, self.lease_mgr, now)
        session.reloc = None
        self.trace.append(
            now,
            "reloc_success",
            job=job.job_id,
            aisi=session.aisi.id,
            old_lease=job.old_lease,
            new_lease=job.new_lease,
            overlap_us=now - job.flip_at,
        )
        new_lease = self.lease_mgr.get(job.new_lease)
        self.evidence.emit(
            now,
            EviKind.RELOCATION,
            session.aisi.id,
            (job.old_lease, job.new_lease),
            new_lease.anchor_id,
            new_lease.tier_id,
        )

    # ------------------------------------------------------------------ requests

    def _schedule_request(self, session: _Session, at: SimTime) -> None:
        if session.ended:
            return
        self.engine.schedule(
            at,
            SimEvent(
                EventKind.REQUEST_ARRIVAL,
                {"session": session, "req_id": self.ids.take(), "attempt": 1},
            ),
        )

    def _next_request_after_outcome(self, session: _Session, now: SimTime) -> None:
        think = session.think.exponential_us(self.config.think_mean_us())
        self._schedule_request(session, now + think)

    def _on_request_arrival(self, session: _Session, req_id: int, attempt: int, now: SimTime) -> None:
        if session.ended:
            return
        req = _Req(req_id=req_id, session=session, attempt=attempt, issued_at=now)
        session.outstanding = req
        self.trace.append(now, "req_arrival", req=req_id, session=session.label, attempt=attempt)
        route = self.steering.classify(session.aisi.id, session.aist.token_id, now)
        if route is None:
            if self.steering.tripwire_hits and self.steering.tripwire_hits[-1].aisi == session.aisi.id:
                hit = self.steering.tripwire_hits[-1]
                self.evidence.emit(
                    now,
                    EviKind.VIOLATION,
                    session.aisi.id,
                    (hit.backing_lease,),
                    hit.anchor_id,
                    "-",
                )
            self._handle_outcome(req, "no_route", 0, "-", "-", "no_route", now)
            return
        anchor_id, qos, entry = route
        anchor = self.anchors[anchor_id]
        rt = self.runtime[anchor_id]
        req.anchor_id = anchor_id
        req.lease_ref = entry.backing_lease
        if entry.backing_lease != UNGATED:
            lease = self.lease_mgr.get(entry.backing_lease)
            req.tier_id = lease.tier_id
        else:
            req.tier_id = session.ungated_tier or session.asp.allowed_fallback_tiers[0]
        reachable = anchor.site_class == SiteClass.CLOUD or anchor.region == session.location
        if not reachable:
            self._handle_outcome(req, "lost", 0, anchor_id, req.tier_id, "unreachable", now)
            return
        if anchor.health == Health.FAILED:
            self._handle_outcome(req, "lost", 0, anchor_id, req.tier_id, "anchor_failed", now)
            return
        if entry.backing_lease == UNGATED:
            if session.ungated_anchor != anchor_id:
                occupancy = self.lease_mgr.anchor_usage[anchor_id] + len(rt.holders)
                if occupancy >= anchor.capacity:
                    self._handle_outcome(req, "lost", 0, anchor_id, req.tier_id, "anchor_busy", now)
                    return
                self._release_slot(session)
                rt.holders.add(session.aisi.id)
                session.ungated_anchor = anchor_id
        req.path_us = session.path_overrides.get(anchor_id, anchor.path_latency_us)
        req.submit_at = now
        self._submit(rt, req, now)

    def _submit(self, rt: _AnchorRuntime, req: _Req, now: SimTime) -> None:
        if rt.busy < rt.anchor.servers:
            self._begin_service(rt, req, now)
        elif len(rt.waiting) < self.config.queue_limit:
            rt.waiting.append(req)
        else:
            self._handle_outcome(
                req, "lost", 0, rt.anchor.anchor_id, req.tier_id, "queue_full", now
            )

    def _begin_service(self, rt: _AnchorRuntime, req: _Req, now: SimTime) -> None:
        rt.busy += 1
        req.in_service = True
        tier = self.tiers[req.tier_id]
        if tier.service_jitter:
            svc = self.svc_rng[rt.anchor.anchor_id].exponential_us(tier.service_mean_us)
        else:
            svc = tier.service_mean_us
        req.svc_us = svc
        self.engine.schedule(
            now + svc,
            SimEvent(
                EventKind.SERVICE_DONE,
                {"anchor": rt.anchor.anchor_id, "req": req, "epoch": rt.epoch},
            ),
        )

    def _on_service_done(self, anchor_id: str, req: _Req, epoch: int, now: SimTime) -> None:
        rt = self.runtime[anchor_id]
        if req.cancelled or epoch != rt.epoch:
            return
        rt.busy -= 1
        req.in_service = False
        latency = req.path_us + (now - req.submit_at)
        self._handle_outcome(req, "served", latency, anchor_id, req.tier_id, "ok", now)
        while rt.waiting and rt.busy < rt.anchor.servers:
            nxt = rt.waiting.popleft()
            if nxt.cancelled:
                continue
            self._begin_service(rt, nxt, now)

    def _handle_outcome(
        self,
        req: _Req,
        outcome: str,
        latency_us: int,
        anchor_id: str,
        tier_id: str,
        reason: str,
        now: SimTime,
    ) -> None:
        session = req.session
        retriable = (
            outcome != "served"
            and session.behavior.request_retries > 0
            and req.attempt <= session.behavior.request_retries
        )
        final = not retriable
        self.trace.append(
            now,
            "req_outcome",
            req=req.req_id,
            session=session.label,
            attempt=req.attempt,
            outcome=outcome,
            reason=reason,
            anchor=anchor_id,
            latency_us=latency_us,
            final=final,
        )
        queue_us = max(0, latency_us - req.path_us - req.svc_us) if outcome == "served" else 0
        self.evidence.emit(
            now,
            EviKind.SERVE,
            session.aisi.id,
            (req.lease_ref,),
            anchor_id,
            tier_id,
            is_request=True,
            latency_us=latency_us,
            queue_us=queue_us,
            loss=outcome != "served",
        )
        session.outstanding = None
        if session.ended:
            return
        if outcome == "served":
            session.served += 1
            session.consecutive_failures = 0
            if session.served >= self.config.requests_per_session:
                self._end_session(session, "completed", now)
                return
            self._next_request_after_outcome(session, now)
            return
        if retriable:
            tier = self.tiers.get(session.ungated_tier) or self.tiers[
                session.asp.allowed_fallback_tiers[0]
            ]
            backoff = tier.service_mean_us * session.behavior.retry_backoff_service_x
            self.engine.schedule(
                now + max(1, backoff),
                SimEvent(
                    EventKind.REQUEST_ARRIVAL,
                    {"session": session, "req_id": req.req_id, "attempt": req.attempt + 1},
                ),
            )
            return
        session.failed += 1
        session.consecutive_failures += 1
        if outcome == "no_route" and session.behavior.uses_leases and session.serving_lease is None:
            self._schedule_repage(session, now)
        elif outcome == "lost" and reason in ("unreachable", "anchor_failed", "anchor_busy"):
            # the serving path is not delivering; re-evaluate placement
            # (rate-limited; a failed earlier relocation gets retried here)
            self._maybe_relocate(session, now, hint=False)
        if session.consecutive_failures >= self.config.giveup_after:
            self._end_session(session, "abandoned", now)
            return
        self._next_request_after_outcome(session, now)

    def _cancel_session_requests_at(self, session: _Session, anchor_ids: set[str], now: SimTime) -> None:
        req = session.outstanding
        if req is None or req.cancelled or req.anchor_id not in anchor_ids:
            return
        if not req.submit_at and not req.in_service:
            return
        rt = self.runtime[req.anchor_id]
        req.cancelled = True
        if req.in_service:
            rt.busy -= 1
            req.in_service = False
            while rt.waiting and rt.busy < rt.anchor.servers:
                nxt = rt.waiting.popleft()
                if nxt.cancelled:
                    continue
                self._begin_service(rt, nxt, now)
        else:
            try:
                rt.waiting.remove(req)
            except ValueError:
                pass
        self._handle_outcome(req, "lost", 0, req.anchor_id, req.tier_id, "path_lost", now)

    # ------------------------------------------------------------------ injections

    def _on_path_change(self, session: _Session, now: SimTime) -> None:
        if session.ended:
            return
        cfg = self.config
        self.engine.schedule(
            now + cfg.path_change_interval_us, SimEvent(EventKind.PATH_CHANGE, {"session": session})
        )
        if not session.path_rng.bernoulli(cfg.effective_relocation_probability()):
            return
        hard = session.path_rng.bernoulli(cfg.hard_move_fraction)
        others = [r for r in self.edge_regions if r != session.location]
        if hard and others:
            new_loc = session.path_rng.choice(others)
            self.trace.append(
                now, "inject", kind="path_change", session=session.label, move="region", to=new_loc
            )
            session.location = new_loc
            session.path_overrides.clear()
            unreachable = {
                a.anchor_id
                for a in self.anchors.values()
                if a.site_class == SiteClass.EDGE and a.region != new_loc
            }
            self._cancel_session_requests_at(session, unreachable, now)
            self._maybe_relocate(session, now, hint=True)
        else:
            current = session.serving_anchor
            if current is None and session.serving_lease is not None:
                current = self.lease_mgr.get(session.serving_lease).anchor_id
            if current is None:
                return
            base = self.anchors[current].path_latency_us
            session.path_overrides[current] = round(base * cfg.path_degrade_factor)
            self.trace.append(
                now, "inject", kind="path_change", session=session.label, move="degrade", anchor=current
            )
            self._maybe_relocate(session, now, hint=True)

    def _on_health_change(self, anchor_id: str, health: Health, now: SimTime) -> None:
        anchor = self.anchors[anchor_id]
        if anchor.health == Health.FAILED and health == Health.DEGRADED:
            return  # hard failure wins until recovery
        anchor.health = health
        self.trace.append(now, "inject", kind="health_change", anchor=anchor_id, health=health)
        self._trigger_relocations_for_anchor(anchor_id, now)

    def _on_anchor_fail(self, payload: dict, now: SimTime) -> None:
        cfg = self.config
        if payload.get("generated"):
            healthy_edges = [
                a.anchor_id
                for a in self.anchors.values()
                if a.site_class == SiteClass.EDGE and a.health != Health.FAILED
            ]
            interval = cfg.effective_failure_interval_us()
            nxt = now + round(interval * (0.75 + 0.5 * self.fail_rng.uniform()))
            self.engine.schedule(nxt, SimEvent(EventKind.ANCHOR_FAIL, {"generated": True}))
            if not healthy_edges:
                return
            anchor_id = self.fail_rng.choice(healthy_edges)
            self.engine.schedule(
                now + cfg.failure_downtime_us, SimEvent(EventKind.ANCHOR_RECOVER, {"anchor": anchor_id})
            )
        else:
            anchor_id = payload["anchor"]
        anchor = self.anchors[anchor_id]
        if anchor.health == Health.FAILED:
            return
        anchor.health = Health.FAILED
        rt = self.runtime[anchor_id]
        rt.epoch += 1
        self.trace.append(now, "inject", kind="anchor_fail", anchor=anchor_id)
        victims = [r for r in rt.waiting if not r.cancelled]
        rt.waiting.clear()
        rt.busy = 0
        for session in self.sessions:
            req = session.outstanding
            if req is not None and not req.cancelled and req.anchor_id == anchor_id and req.in_service:
                req.cancelled = True
                req.in_service = False
                victims.append(req)
        for req in victims:
            req.cancelled = True
            self._handle_outcome(
                req, "lost", 0, anchor_id, req.tier_id, "killed_by_failure", now
            )
        self._trigger_relocations_for_anchor(anchor_id, now)

    def _on_anchor_recover(self, anchor_id: str, now: SimTime) -> None:
        anchor = self.anchors[anchor_id]
        if anchor.health == Health.HEALTHY:
            return
        anchor.health = Health.HEALTHY
        self.trace.append(now, "inject", kind="anchor_recover", anchor=anchor_id)

    def _trigger_relocations_for_anchor(self, anchor_id: str, now: SimTime) -> None:
        for session in self.sessions:
            if session.ended or not session.started:
                continue
            serving = session.serving_anchor
            if serving is None and session.serving_lease is not None:
                serving = self.lease_mgr.get(session.serving_lease).anchor_id
            if serving == anchor_id:
                self._maybe_relocate(session, now, hint=False)

    def _on_capacity_change(self, now: SimTime) -> None:
        cfg = self.config
        for anchor in self.anchors.values():
            if anchor.site_class == SiteClass.EDGE:
                new_cap, new_srv = cfg.overload_edge_capacity, cfg.overload_edge_servers
            else:
                new_cap, new_srv = cfg.overload_cloud_capacity, cfg.overload_cloud_servers
            if new_cap <= 0:
                continue
            anchor.capacity = new_cap
            if new_srv > 0:
                anchor.servers = new_srv
            self.trace.append(
                now,
                "inject",
                kind="capacity_change",
                anchor=anchor.anchor_id,
                capacity=new_cap,
                servers=anchor.servers,
            )
            excess = self.lease_mgr.anchor_usage[anchor.anchor_id] - anchor.capacity
            if excess > 0:
                for lease_id in sorted(self.lease_mgr.active_on(anchor.anchor_id), reverse=True)[
                    :excess
                ]:
                    lease = self.lease_mgr.revoke(lease_id, "capacity_change", now)
                    self.steering.remove_steering(lease_id, now, reason="revocation")
                    self.evidence.emit(
                        now,
                        EviKind.LEASE_REVOCATION,
                        lease.aisi,
                        (lease_id,),
                        anchor.anchor_id,
                        lease.tier_id,
                    )
                    session = self.lease_sessions.get(lease_id)
                    if session is not None and session.serving_lease == lease_id:
                        session.serving_lease = None
                        session.serving_anchor = None
                        self._schedule_repage(session, now)

    def _cut_off_open_requests(self) -> None:
        horizon = self.config.horizon_us
        for session in self.sessions:
            req = session.outstanding
            if req is not None and not req.cancelled:
                self.trace.append(
                    horizon,
                    "req_outcome",
                    req=req.req_id,
                    session=session.label,
                    attempt=req.attempt,
                    outcome="lost",
                    reason="horizon",
                    anchor=req.anchor_id or "-",
                    latency_us=0,
                    final=True,
                )


def run_scenario(config: ScenarioConfig) -> tuple[Trace, MetricsReport]:
    """Execute one (config, policy, seed) run and compute its metrics."""
    return ScenarioRunner(config).run()
