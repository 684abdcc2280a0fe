#!/usr/bin/env python3
"""Regenerate the planted-defect trace corpus under tests/data/defect_traces/.

Each defect file is the conforming base trace with exactly one mutation,
so a verifier must isolate the planted class without being distracted by
collateral noise.
"""

from __future__ import annotations

import os

OUT_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    "tests",
    "data",
    "defect_traces",
)

META = dict(
    setup="corpus",
    policy="aipaging",
    seed=1,
    horizon_us=2_000_000,
    sessions=1,
    t_c_us=150_000,
    t_d_us=100_000,
    lease_us=500_000,
    recovery_window_us=2_000_000,
)


def base_events():
    """One session: page in, relocate a0 -> a1, later lease expiry, end."""
    return [
        (0, "meta", dict(META)),
        (0, "session_start", dict(session="s1", aisi=1, aist=2, region="A", target_us=50_000)),
        (0, "txn_start", dict(txn="s1-t1", aisi=1, t_c_us=150_000)),
        (0, "txn_attempt", dict(txn="s1-t1", n=1, anchor="edge-a1", tier="large", score_us=21_000)),
        (5_000, "txn_reply", dict(txn="s1-t1", anchor="edge-a1", accept=1)),
        (5_000, "lease_issued", dict(lease=3, aisi=1, anchor="edge-a1", tier="large", qos="interactive", expires_us=505_000)),
        (5_000, "steer_install", dict(entry=4, aisi=1, anchor="edge-a1", lease=3, prio=10)),
        (5_000, "txn_success", dict(txn="s1-t1", lease=3, elapsed_us=5_000)),
        (100_000, "reloc_start", dict(job=1, aisi=1, trigger="mobility", old_anchor="edge-a1")),
        (100_000, "txn_start", dict(txn="s1-r1", aisi=1, t_c_us=150_000)),
        (100_000, "txn_attempt", dict(txn="s1-r1", n=1, anchor="edge-b1", tier="large", score_us=22_000)),
        (105_000, "txn_reply", dict(txn="s1-r1", anchor="edge-b1", accept=1)),
        (105_000, "lease_issued", dict(lease=5, aisi=1, anchor="edge-b1", tier="large", qos="interactive", expires_us=605_000)),
        (105_000, "steer_install", dict(entry=6, aisi=1, anchor="edge-b1", lease=5, prio=5)),
        (105_000, "txn_success", dict(txn="s1-r1", lease=5, elapsed_us=5_000)),
        (105_000, "reloc_flip", dict(job=1, aisi=1, old_lease=3, new_lease=5)),
        (205_000, "lease_released", dict(lease=3, anchor="edge-a1", reason="release")),
        (205_000, "steer_remove", dict(entry=4, aisi=1, anchor="edge-a1", lease=3, reason="relocation")),
        (205_000, "reloc_success", dict(job=1, aisi=1, old_lease=3, new_lease=5, overlap_us=100_000)),
        (205_000, "evi", dict(kind="relocation", aisi=1, leases="3/5", anchor="edge-b1", tier="large", latency_us=0, queue_us=0, loss=0)),
        (605_000, "lease_expired", dict(lease=5, anchor="edge-b1")),
        (605_000, "steer_remove", dict(entry=6, aisi=1, anchor="edge-b1", lease=5, reason="expiry")),
        (605_000, "evi", dict(kind="lease_expiry", aisi=1, leases="5", anchor="edge-b1", tier="large", latency_us=0, queue_us=0, loss=0)),
        (700_000, "session_end", dict(session="s1", reason="completed", served=5, failed=0)),
    ]


def mutate(events, name):
    events = [list(e) for e in events]

    def find(category, **match):
        for e in events:
            if e[1] == category and all(str(e[2].get(k)) == str(v) for k, v in match.items()):
                return e
        raise KeyError(f"{category} {match}")

    if name == "conforming":
        pass
    elif name == "late_removal":
        # steering outlives its expired lease by 1 ms
        find("steer_remove", entry=6)[0] = 606_000
    elif name == "early_release":
        # old path torn down before the priority flip
        find("lease_released", lease=3)[0] = 104_000
        find("steer_remove", entry=4)[0] = 104_000
    elif name == "flip_before_install":
        # target steering appears only after the flip
        find("steer_install", entry=6)[0] = 106_000
    elif name == "double_terminal":
        events.append([505_000, "lease_expired", dict(lease=3, anchor="edge-a1")])
    elif name == "post_tc_attempt":
        events.append(
            [251_000, "txn_attempt", dict(txn="s1-r1", n=2, anchor="edge-a2", tier="large", score_us=23_000)]
        )
    elif name == "aisi_reissue":
        events.append(
            [800_000, "session_start", dict(session="s2", aisi=1, aist=9, region="B", target_us=50_000)]
        )
    elif name == "overlap_exceeded":
        # drain runs 50 ms past the bounded window
        find("lease_released", lease=3)[0] = 255_000
        find("steer_remove", entry=4)[0] = 255_000
        e = find("reloc_success", job=1)
        e[0] = 255_000
        e[2]["overlap_us"] = 150_000
        find("evi", kind="relocation")[0] = 255_000
    else:
        raise ValueError(name)
    return events


def render(events):
    events.sort(key=lambda e: e[0])
    lines = []
    for seq, (time_us, category, fields) in enumerate(events):
        cols = [str(time_us), str(seq), category]
        cols.extend(f"{k}={v}" for k, v in fields.items())
        lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"


CASES = (
    "conforming",
    "late_removal",
    "early_release",
    "flip_before_install",
    "double_terminal",
    "post_tc_attempt",
    "aisi_reissue",
    "overlap_exceeded",
)


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    for name in CASES:
        path = os.path.join(OUT_DIR, f"{name}.tsv")
        with open(path, "w", newline="\n") as fh:
            fh.write(render(mutate(base_events(), name)))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
