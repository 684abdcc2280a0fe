from __future__ import annotations

import pytest

from aipaging.enforcement import (
    LeaseInvalid,
    NoSuchEntry,
    PRIORITY_ACTIVE,
    PRIORITY_STANDBY,
    SteeringTable,
)
from aipaging.model import Commit, IdSource, QosBinding, UNGATED
from aipaging.trace import Trace

QOS = QosBinding("interactive", 50_000)


def make_lease(lease_id=1, aisi=1, anchor="edge-a1", expires=500_000):
    return Commit(lease_id, aisi, anchor, "large", QOS, 0, expires)


def make_table(gated=True, valid_ids=None):
    valid = set(valid_ids or [])
    table = SteeringTable(
        Trace(), IdSource(start=100), lambda lease_id, now: lease_id in valid, gated=gated
    )
    return table, valid


class TestInstall:
    def test_active_lease_installs_and_classifies(self):
        table, valid = make_table(valid_ids=[1])
        lease = make_lease()
        entry = table.install_steering(lease, aist=2, priority=PRIORITY_ACTIVE, now=10)
        route = table.classify(1, 2, now=20)
        assert route is not None and route[0] == "edge-a1"
        assert entry.backing_lease == 1

    def test_expired_lease_refused_no_state(self):
        table, _ = make_table()
        stale = make_lease(expires=5)
        with pytest.raises(LeaseInvalid):
            table.install_steering(stale, aist=2, priority=PRIORITY_ACTIVE, now=10)
        assert table.all_entries() == []

    def test_ungated_install_carries_sentinel(self):
        table, _ = make_table(gated=False)
        entry = table.install_unbacked(1, 2, "edge-a1", QOS, PRIORITY_ACTIVE, now=0)
        assert entry.backing_lease == UNGATED
        assert table.classify(1, 2, now=1_000_000)[0] == "edge-a1"


class TestRemove:
    def test_remove_by_lease(self):
        table, _ = make_table(valid_ids=[1])
        table.install_steering(make_lease(), 2, PRIORITY_ACTIVE, 0)
        assert table.remove_steering(1, now=50, reason="expiry") == 1

    def test_remove_is_idempotent(self):
        table, _ = make_table(valid_ids=[1])
        table.install_steering(make_lease(), 2, PRIORITY_ACTIVE, 0)
        table.remove_steering(1, now=50, reason="expiry")
        assert table.remove_steering(1, now=60, reason="expiry") == 0


class TestFlip:
    def setup_method(self):
        self.table, self.valid = make_table(valid_ids=[1, 5])
        self.table.install_steering(make_lease(lease_id=1, anchor="a0"), 2, PRIORITY_ACTIVE, 0)
        self.table.install_steering(make_lease(lease_id=5, anchor="a1"), 2, PRIORITY_STANDBY, 10)

    def test_swap_semantics(self):
        self.table.flip_priority(1, new_lease_id=5, now=20)
        entries = {e.backing_lease: e.priority for e in self.table.entries_for(1)}
        assert entries == {5: PRIORITY_ACTIVE, 1: PRIORITY_STANDBY}

    def test_classify_before_and_after_flip(self):
        assert self.table.classify(1, 2, 15)[0] == "a0"
        self.table.flip_priority(1, new_lease_id=5, now=20)
        assert self.table.classify(1, 2, 20)[0] == "a1"

    def test_flip_without_entry_errors(self):
        with pytest.raises(NoSuchEntry):
            self.table.flip_priority(1, new_lease_id=99, now=20)


class TestClassify:
    def test_no_entries_no_route(self):
        table, _ = make_table()
        assert table.classify(1, 2, 0) is None

    def test_token_mismatch_no_route(self):
        table, _ = make_table(valid_ids=[1])
        table.install_steering(make_lease(), 2, PRIORITY_ACTIVE, 0)
        assert table.classify(1, 3, 10) is None

    def test_stale_entry_trips_wire(self):
        table, valid = make_table(valid_ids=[1])
        table.install_steering(make_lease(), 2, PRIORITY_ACTIVE, 0)
        valid.discard(1)  # lease invalidated behind the table's back
        assert table.classify(1, 2, 10) is None
        assert len(table.tripwire_hits) == 1
        assert any(e.category == "tripwire" for e in table.trace)
