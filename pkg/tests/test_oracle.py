from __future__ import annotations

import os

import pytest

from aipaging.oracle import (
    AISI_REISSUE,
    DOUBLE_TERMINAL,
    FLIP_BEFORE_INSTALL,
    LATE_REMOVAL,
    OVERLAP_EXCEEDED,
    POST_TIMEOUT_ATTEMPT,
    RELEASE_BEFORE_FLIP,
    oracle_check,
)
from aipaging.model import PolicyKind
from aipaging.sim import run_scenario
from aipaging.trace import MalformedTrace, parse_trace

from conftest import DATA_DIR, mini_config

CORPUS = os.path.join(DATA_DIR, "defect_traces")

EXPECTED_CLASS = {
    "late_removal.tsv": LATE_REMOVAL,
    "early_release.tsv": RELEASE_BEFORE_FLIP,
    "flip_before_install.tsv": FLIP_BEFORE_INSTALL,
    "double_terminal.tsv": DOUBLE_TERMINAL,
    "post_tc_attempt.tsv": POST_TIMEOUT_ATTEMPT,
    "aisi_reissue.tsv": AISI_REISSUE,
    "overlap_exceeded.tsv": OVERLAP_EXCEEDED,
}


class TestCorpus:
    def test_conforming_trace_passes(self):
        entries = parse_trace(os.path.join(CORPUS, "conforming.tsv"))
        assert oracle_check(entries) == []

    @pytest.mark.parametrize("filename", sorted(EXPECTED_CLASS))
    def test_each_planted_defect_is_named(self, filename):
        entries = parse_trace(os.path.join(CORPUS, filename))
        found = {v.kind for v in oracle_check(entries)}
        assert EXPECTED_CLASS[filename] in found


class TestConformingRuns:
    @pytest.mark.parametrize("policy", list(PolicyKind))
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_simulated_runs_conform(self, policy, seed, tmp_path):
        cfg = mini_config(
            policy_kind=policy, seed=seed,
            relocation_probability=0.5, failure_interval_us=4_000_000,
        )
        trace, _ = run_scenario(cfg)
        # oracle independence: audit the serialized file, not live state
        path = tmp_path / "run.trace.tsv"
        trace.write(str(path))
        del trace
        entries = parse_trace(str(path))
        assert oracle_check(entries) == []


class TestMalformed:
    def test_truncated_column_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\t0\n")
        with pytest.raises(MalformedTrace):
            parse_trace(str(path))

    def test_out_of_order_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("5\t0\tmeta\tx=1\n3\t1\tinject\tkind=noop\n")
        with pytest.raises(MalformedTrace):
            parse_trace(str(path))

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("")
        with pytest.raises(MalformedTrace):
            parse_trace(str(path))
