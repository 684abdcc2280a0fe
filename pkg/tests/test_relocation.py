from __future__ import annotations

import pytest

from aipaging.controller import AnchorObservation, ControlContext
from aipaging.enforcement import PRIORITY_ACTIVE, SteeringTable
from aipaging.leases import LeaseTable
from aipaging.model import Commit, Health, IdSource, QosBinding, US_PER_S
from aipaging.relocation import (
    JobPhase,
    RelocationRateLimiter,
    RelocationTrigger,
    relocate,
    should_relocate,
)
from aipaging.trace import Trace

from conftest import make_anchor, make_tiers
from test_controller import make_intent, make_policy
from aipaging.controller import derive_asp, issue_identity

QOS = QosBinding("interactive", 50_000)


def make_world(*anchors, lease_duration_us=2_000_000):
    anchors = {a.anchor_id: a for a in anchors}
    trace = Trace()
    ids = IdSource()
    lease_mgr = LeaseTable(anchors, trace, ids)
    steering = SteeringTable(trace, ids, lease_mgr.is_valid, gated=True)
    policy = make_policy(default_lease_duration_us=lease_duration_us)
    asp = derive_asp(make_intent(), policy)
    aisi, aist = issue_identity(asp, 0, ids)
    ctx = ControlContext(anchors=anchors, tiers=make_tiers(), ids=ids, trace=trace)
    return anchors, trace, lease_mgr, steering, policy, asp, aisi, aist, ctx


def serve_on(lease_mgr, steering, asp, aisi, aist, anchor_id, now=0):
    lease = lease_mgr.request_lease(anchor_id, "large", QOS, aisi.id, asp, now)
    assert isinstance(lease, Commit)
    steering.install_steering(lease, aist.token_id, PRIORITY_ACTIVE, now)
    return lease


class TestShouldRelocate:
    def setup_method(self):
        (
            self.anchors,
            _,
            self.lease_mgr,
            self.steering,
            self.policy,
            self.asp,
            self.aisi,
            self.aist,
            self.ctx,
        ) = make_world(
            make_anchor(anchor_id="a0", path_ms=5),
            make_anchor(anchor_id="a1", path_ms=5),
        )
        self.tiers = make_tiers()
        self.limiter = RelocationRateLimiter(4.0)

    def _check(self, telemetry=None, hint=False, now=0, anchor="a0", tier="large"):
        return should_relocate(
            self.anchors[anchor],
            self.tiers[tier],
            self.asp,
            telemetry or {},
            self.anchors,
            self.tiers,
            self.limiter,
            now,
            path_change_hint=hint,
        )

    def test_failed_anchor_triggers_failure(self):
        self.anchors["a0"].health = Health.FAILED
        assert self._check() == RelocationTrigger.FAILURE

    def test_degraded_anchor_triggers_health(self):
        self.anchors["a0"].health = Health.DEGRADED
        assert self._check() == RelocationTrigger.HEALTH

    def test_under_hysteresis_threshold_stays(self):
        # predicted 49 ms vs target 50 ms with H=1.2: stay put
        telemetry = {"a0": AnchorObservation(path_latency_us=33_000, load_fraction=0.0)}
        assert self._check(telemetry) is None

    def test_over_hysteresis_threshold_moves(self):
        telemetry = {"a0": AnchorObservation(path_latency_us=60_000, load_fraction=0.0)}
        assert self._check(telemetry) == RelocationTrigger.OVERLOAD

    def test_path_hint_with_better_candidate(self):
        telemetry = {
            "a0": AnchorObservation(path_latency_us=20_000, load_fraction=0.0),
            "a1": AnchorObservation(path_latency_us=5_000, load_fraction=0.0),
        }
        assert self._check(telemetry, hint=True) == RelocationTrigger.MOBILITY

    def test_path_hint_without_margin(self):
        telemetry = {
            "a0": AnchorObservation(path_latency_us=6_000, load_fraction=0.0),
            "a1": AnchorObservation(path_latency_us=5_000, load_fraction=0.0),
        }
        assert self._check(telemetry, hint=True) is None

    def test_rate_limit_suppresses_despite_degraded_health(self):
        self.anchors["a0"].health = Health.DEGRADED
        for t in (0, 100_000, 200_000, 300_000):
            self.limiter.record(t)
        assert self._check(now=400_000) is None
        # window slides: a second later the budget is back
        assert self._check(now=300_000 + US_PER_S + 1) == RelocationTrigger.HEALTH


class TestRateLimiter:
    def test_window_counts_starts(self):
        limiter = RelocationRateLimiter(2.0)
        assert limiter.allow(0)
        limiter.record(0)
        limiter.record(500_000)
        assert not limiter.allow(900_000)
        assert limiter.allow(US_PER_S + 1)


class TestRelocate:
    def test_make_before_break_ordering_and_exact_drain(self):
        world = make_world(
            make_anchor(anchor_id="a0", path_ms=5),
            make_anchor(anchor_id="a1", path_ms=6),
        )
        anchors, trace, lease_mgr, steering, policy, asp, aisi, aist, ctx = world
        old = serve_on(lease_mgr, steering, asp, aisi, aist, "a0")
        job = relocate(
            aisi.id, aist, old, asp, policy.commit_timeout_us, policy.drain_timeout_us,
            1_000_000, lease_mgr, steering, ctx, job_id=1,
        )
        assert job.phase == JobPhase.DONE
        install_t = next(
            e.time_us for e in trace if e.category == "steer_install" and e.get("anchor") == "a1"
        )
        flip_t = next(e.time_us for e in trace if e.category == "reloc_flip")
        release_t = next(e.time_us for e in trace if e.category == "lease_released")
        assert install_t <= flip_t < release_t
        assert release_t - flip_t == policy.drain_timeout_us
        assert steering.classify(aisi.id, aist.token_id, release_t)[0] == "a1"

    def test_no_feasible_target_leaves_old_path(self):
        world = make_world(make_anchor(anchor_id="a0", path_ms=5))
        anchors, trace, lease_mgr, steering, policy, asp, aisi, aist, ctx = world
        old = serve_on(lease_mgr, steering, asp, aisi, aist, "a0")
        before = [e.entry_id for e in steering.entries_for(aisi.id)]
        job = relocate(
            aisi.id, aist, old, asp, policy.commit_timeout_us, policy.drain_timeout_us,
            1_000_000, lease_mgr, steering, ctx, job_id=2,
        )
        assert job.phase == JobPhase.FAILED
        assert job.fail_cause == "no-feasible-target"
        assert [e.entry_id for e in steering.entries_for(aisi.id)] == before
        assert lease_mgr.is_valid(old.lease_id, 1_100_000)

    def test_old_lease_expiring_mid_drain_removes_old_path_early(self):
        from aipaging.relocation import RelocationJob

        world = make_world(
            make_anchor(anchor_id="a0", path_ms=5),
            make_anchor(anchor_id="a1", path_ms=6),
            lease_duration_us=1_060_000,
        )
        anchors, trace, lease_mgr, steering, policy, asp, aisi, aist, ctx = world
        old = serve_on(lease_mgr, steering, asp, aisi, aist, "a0")  # expires at 1 060 000
        job = RelocationJob(
            aisi.id, aist, old.lease_id, "a0", RelocationTrigger.MOBILITY, asp,
            policy.drain_timeout_us, job_id=3,
        )
        job._advance(JobPhase.ADMITTING)
        new = lease_mgr.request_lease("a1", "large", QOS, aisi.id, asp, 1_005_000)
        assert isinstance(new, Commit)
        job.on_admitted(new, steering, 1_005_000)
        assert job.flip(steering, lease_mgr, 1_005_000)
        # old lease dies at 1 060 000, before the 1 105 000 drain deadline
        expired = lease_mgr.expire_due(1_060_000)
        assert old.lease_id in expired
        assert steering.remove_steering(old.lease_id, 1_060_000, reason="expiry") == 1
        # drain deadline tolerates the already-terminal old lease
        job.on_drain_deadline(steering, lease_mgr, job.drain_deadline)
        assert job.phase == JobPhase.DONE
        assert lease_mgr.is_valid(job.new_lease, job.drain_deadline)
        assert steering.classify(aisi.id, aist.token_id, 1_105_000)[0] == "a1"

    def test_relocation_keeps_identity_stable(self):
        world = make_world(
            make_anchor(anchor_id="a0", path_ms=5),
            make_anchor(anchor_id="a1", path_ms=6),
        )
        anchors, trace, lease_mgr, steering, policy, asp, aisi, aist, ctx = world
        old = serve_on(lease_mgr, steering, asp, aisi, aist, "a0")
        relocate(
            aisi.id, aist, old, asp, policy.commit_timeout_us, policy.drain_timeout_us,
            1_000_000, lease_mgr, steering, ctx, job_id=4,
        )
        reloc_aisis = {e.get_int("aisi") for e in trace if e.category.startswith("reloc_")}
        assert reloc_aisis == {aisi.id}
