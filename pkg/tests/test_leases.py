from __future__ import annotations

import pytest

from aipaging.leases import AlreadyTerminal, LeaseNotFound, LeaseTable
from aipaging.model import Commit, Health, IdSource, LeaseState, QosBinding, RejectCause
from aipaging.trace import Trace

from conftest import make_anchor
from test_model import make_asp

QOS = QosBinding("interactive", 50_000)


def make_table(*anchors):
    anchors = anchors or (make_anchor(capacity=1),)
    table = LeaseTable({a.anchor_id: a for a in anchors}, Trace(), IdSource())
    return table, {a.anchor_id: a for a in anchors}


def request(table, anchor_id="edge-a1", aisi=1, now=0, asp=None):
    return table.request_lease(anchor_id, "large", QOS, aisi, asp or make_asp(), now)


class TestRequestLease:
    def test_accept_under_free_capacity(self):
        table, _ = make_table()
        result = request(table)
        assert isinstance(result, Commit)
        assert table.anchor_usage["edge-a1"] == 1

    def test_capacity_exhausted_rejects(self):
        table, _ = make_table()
        assert isinstance(request(table), Commit)
        assert request(table, aisi=2) == RejectCause.CAPACITY

    def test_failed_anchor_rejects(self):
        table, anchors = make_table()
        anchors["edge-a1"].health = Health.FAILED
        assert request(table) == RejectCause.HEALTH

    def test_locality_mismatch_rejects(self):
        table, _ = make_table()
        asp = make_asp(locality_region=frozenset({"B"}))
        assert request(table, asp=asp) == RejectCause.LOCALITY

    def test_expiry_arithmetic(self):
        table, _ = make_table()
        lease = request(table, now=1_000_000, asp=make_asp(lease_duration_us=500_000))
        assert lease.expires_at == 1_500_000


class TestExpireDue:
    def test_boundary_is_inclusive(self):
        table, _ = make_table()
        lease = request(table, asp=make_asp(lease_duration_us=500_000))
        assert table.expire_due(499_999) == []
        assert table.expire_due(500_000) == [lease.lease_id]
        assert lease.state == LeaseState.EXPIRED
        assert table.anchor_usage["edge-a1"] == 0

    def test_simultaneous_expiries_in_id_order(self):
        table, _ = make_table(make_anchor(capacity=3))
        leases = [request(table, aisi=i) for i in range(3)]
        ids = [l.lease_id for l in leases]
        assert table.expire_due(500_000) == sorted(ids)

    def test_next_expiry_skips_terminated(self):
        table, _ = make_table(make_anchor(capacity=2))
        first = request(table)
        second = request(table, aisi=2, now=100)
        table.release(first.lease_id, 200)
        assert table.next_expiry() == (second.expires_at, second.lease_id)


class TestRevokeRelease:
    def test_revoke_active(self):
        table, _ = make_table()
        lease = request(table)
        table.revoke(lease.lease_id, "policy_change", 100)
        assert lease.state == LeaseState.REVOKED
        assert table.anchor_usage["edge-a1"] == 0

    def test_revoke_expired_is_terminal_error(self):
        table, _ = make_table()
        lease = request(table)
        table.expire_due(500_000)
        with pytest.raises(AlreadyTerminal):
            table.revoke(lease.lease_id, "x", 600_000)

    def test_revoke_unknown_id(self):
        table, _ = make_table()
        with pytest.raises(LeaseNotFound):
            table.revoke(999, "x", 0)

    def test_double_release(self):
        table, _ = make_table()
        lease = request(table)
        table.release(lease.lease_id, 100)
        with pytest.raises(AlreadyTerminal):
            table.release(lease.lease_id, 200)

    def test_release_during_overlap_keeps_new_lease_active(self):
        table, _ = make_table(make_anchor(capacity=1), make_anchor(anchor_id="edge-b1", region="B", capacity=1))
        asp = make_asp(locality_region=frozenset({"A", "B"}))
        old = request(table, asp=asp)
        new = table.request_lease("edge-b1", "large", QOS, 1, asp, 100)
        assert isinstance(new, Commit)
        table.release(old.lease_id, 200)
        assert old.state == LeaseState.RELEASED
        assert new.state == LeaseState.ACTIVE


class TestIsValid:
    def test_active_before_expiry(self):
        table, _ = make_table()
        lease = request(table)
        assert table.is_valid(lease.lease_id, 499_999)

    def test_expiry_instant_is_invalid(self):
        table, _ = make_table()
        lease = request(table)
        assert not table.is_valid(lease.lease_id, 500_000)

    def test_revoked_is_invalid(self):
        table, _ = make_table()
        lease = request(table)
        table.revoke(lease.lease_id, "x", 100)
        assert not table.is_valid(lease.lease_id, 200)


class TestRenewal:
    def test_swap_is_usage_neutral_at_full_anchor(self):
        table, _ = make_table(make_anchor(capacity=1))
        old = request(table)
        new = table.renew(old.lease_id, make_asp(), 400_000)
        assert isinstance(new, Commit)
        assert old.state == LeaseState.RELEASED
        assert new.anchor_id == old.anchor_id
        assert new.expires_at == 900_000
        assert table.anchor_usage["edge-a1"] == 1
        table.check_capacity_safety()

    def test_renew_failed_anchor_rejected(self):
        table, anchors = make_table()
        old = request(table)
        anchors["edge-a1"].health = Health.FAILED
        assert table.renew(old.lease_id, make_asp(), 100) == RejectCause.HEALTH
        assert old.state == LeaseState.ACTIVE
