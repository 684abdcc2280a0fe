from __future__ import annotations

import os

import pytest

from aipaging.model import Anchor, IdSource, ModelTier, SiteClass
from aipaging.scenario import parse_config_text
from aipaging.trace import Trace

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")
DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def config_path(name: str) -> str:
    return os.path.join(CONFIG_DIR, name)


@pytest.fixture
def trace():
    return Trace()


@pytest.fixture
def ids():
    return IdSource()


def make_anchor(
    anchor_id="edge-a1",
    site=SiteClass.EDGE,
    region="A",
    tiers=("large", "small"),
    capacity=4,
    path_ms=5,
    servers=2,
    **kw,
):
    return Anchor(
        anchor_id=anchor_id,
        site_class=site,
        region=region,
        tiers_offered=tuple(tiers),
        capacity=capacity,
        path_latency_us=path_ms * 1000,
        servers=servers,
        **kw,
    )


def make_tiers():
    return {
        "large": ModelTier("large", 16_000, False, 3.0),
        "small": ModelTier("small", 8_000, False, 1.0),
    }


MINI_CONFIG = """
setup = Mini
horizon_ms = 15000
arrival_rate = 4
sessions = 6
lease_duration_ms = 2000
tier = id=small mean_ms=8 cost=1 jitter=exp
tier = id=large mean_ms=16 cost=3 jitter=exp
tier_preference = large,small
anchor = id=edge-a1 site=edge region=A tiers=large,small capacity=6 path_ms=5 servers=2
anchor = id=edge-a2 site=edge region=A tiers=large,small capacity=6 path_ms=6 servers=2
anchor = id=edge-b1 site=edge region=B tiers=large,small capacity=6 path_ms=5 servers=2
anchor = id=edge-b2 site=edge region=B tiers=large,small capacity=6 path_ms=6 servers=2
anchor = id=cloud-c1 site=cloud region=core tiers=large,small capacity=12 path_ms=40 servers=4
"""


def mini_config(**overrides):
    cfg = parse_config_text(MINI_CONFIG)
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg
