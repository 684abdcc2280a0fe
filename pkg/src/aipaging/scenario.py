"""Scenario configuration: the documented key=value config schema plus the
stress-level coupling that drives the robustness sweeps.

Config files are flat `key = value` lines; `anchor`, `tier` and `fail`
keys repeat and take space-separated sub-fields. Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .model import (
    Anchor,
    EvidenceMode,
    Health,
    InvalidField,
    ModelTier,
    PolicyKind,
    SiteClass,
    ms_to_us,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FailureSpec:
    at_us: int
    anchor_id: str
    kind: str  # "hard" | "soft"
    recover_after_us: int = 0  # 0 = never recovers


@dataclass
class ScenarioConfig:
    setup_id: str
    anchors: list[Anchor]
    tiers: list[ModelTier]
    horizon_us: int
    arrival_rate: float  # per-session request rate (closed-loop think rate), 1/s
    relocation_probability: float = 0.0
    stress_level: float = 0.0
    overload_threshold: float = 1.0
    lease_duration_us: int = 2_000_000
    failure_schedule: list[FailureSpec] = field(default_factory=list)
    seed: int = 1
    policy_kind: PolicyKind = PolicyKind.AI_PAGING

    sessions: int = 8
    requests_per_session: int = 20
    target_latency_us: int = 50_000
    reliability_target: float = 0.99
    tier_preference: tuple[str, ...] = ()

    path_change_interval_us: int = 1_000_000
    hard_move_fraction: float = 0.4
    path_degrade_factor: float = 4.0
    admission_delay_us: int = 5_000
    commit_timeout_us: int = 150_000
    drain_timeout_us: int = 100_000
    evidence: EvidenceMode = EvidenceMode.MINIMAL
    max_relocation_rate: float = 4.0
    queue_limit: int = 16
    giveup_after: int = 30
    repage_backoff_us: int = 400_000
    recovery_window_us: int = 2_000_000
    retry_limit: int = 3
    session_stagger_us: int = 500_000

    failure_interval_us: int = 0  # 0 = only the explicit schedule
    failure_downtime_us: int = 5_000_000
    overload_at_us: int = 0  # 0 = no capacity squeeze
    overload_edge_capacity: int = 0
    overload_edge_servers: int = 0
    overload_cloud_capacity: int = 0
    overload_cloud_servers: int = 0

    # -- stress coupling: offered load and churn scale together ------------

    def effective_arrival_rate(self) -> float:
        return self.arrival_rate * (1.0 + 4.0 * self.stress_level)

    def effective_relocation_probability(self) -> float:
        if self.stress_level > 0.0:
            return self.stress_level
        return self.relocation_probability

    def effective_failure_interval_us(self) -> int:
        if self.failure_interval_us <= 0:
            return 0
        return max(1, round(self.failure_interval_us / (1.0 + 2.0 * self.stress_level)))

    def think_mean_us(self) -> int:
        return max(1, round(1_000_000 / self.effective_arrival_rate()))

    def validate(self) -> None:
        if self.horizon_us <= 0:
            raise ConfigError("horizon must be positive")
        if self.arrival_rate <= 0:
            raise ConfigError("arrival_rate must be positive")
        for name in ("relocation_probability", "stress_level", "hard_move_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.overload_threshold <= 1.0:
            raise ConfigError("overload_threshold must be in [0, 1]")
        if not self.anchors:
            raise ConfigError("at least one anchor required")
        if not self.tiers:
            raise ConfigError("at least one tier required")
        if self.sessions <= 0:
            raise ConfigError("sessions must be positive")
        tier_ids = {t.tier_id for t in self.tiers}
        seen = set()
        for anchor in self.anchors:
            if anchor.anchor_id in seen:
                raise ConfigError(f"duplicate anchor {anchor.anchor_id}")
            seen.add(anchor.anchor_id)
            for t in anchor.tiers_offered:
                if t not in tier_ids:
                    raise ConfigError(f"anchor {anchor.anchor_id} offers unknown tier {t}")
        for spec in self.failure_schedule:
            if spec.anchor_id not in seen:
                raise ConfigError(f"failure schedule references unknown anchor {spec.anchor_id}")
            if spec.kind not in ("hard", "soft"):
                raise ConfigError(f"failure kind must be hard|soft, got {spec.kind}")
        for t in self.tier_preference:
            if t not in tier_ids:
                raise ConfigError(f"tier_preference references unknown tier {t}")

    def preferred_tiers(self) -> tuple[str, ...]:
        if self.tier_preference:
            return self.tier_preference
        return tuple(t.tier_id for t in self.tiers)

    def edge_regions(self) -> list[str]:
        regions: list[str] = []
        for anchor in self.anchors:
            if anchor.site_class == SiteClass.EDGE and anchor.region not in regions:
                regions.append(anchor.region)
        return regions

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg


_SCALARS = {
    "setup": ("setup_id", str),
    "seed": ("seed", int),
    "policy": ("policy_kind", lambda v: PolicyKind(v)),
    "horizon_ms": ("horizon_us", ms_to_us),
    "arrival_rate": ("arrival_rate", float),
    "relocation_probability": ("relocation_probability", float),
    "stress_level": ("stress_level", float),
    "overload_threshold": ("overload_threshold", float),
    "lease_duration_ms": ("lease_duration_us", ms_to_us),
    "sessions": ("sessions", int),
    "requests_per_session": ("requests_per_session", int),
    "target_latency_ms": ("target_latency_us", ms_to_us),
    "reliability_target": ("reliability_target", float),
    "tier_preference": ("tier_preference", lambda v: tuple(x.strip() for x in v.split(","))),
    "path_change_interval_ms": ("path_change_interval_us", ms_to_us),
    "hard_move_fraction": ("hard_move_fraction", float),
    "path_degrade_factor": ("path_degrade_factor", float),
    "admission_delay_ms": ("admission_delay_us", ms_to_us),
    "commit_timeout_ms": ("commit_timeout_us", ms_to_us),
    "drain_timeout_ms": ("drain_timeout_us", ms_to_us),
    "evidence": ("evidence", lambda v: EvidenceMode(v)),
    "max_relocation_rate": ("max_relocation_rate", float),
    "queue_limit": ("queue_limit", int),
    "giveup_after": ("giveup_after", int),
    "repage_backoff_ms": ("repage_backoff_us", ms_to_us),
    "recovery_window_ms": ("recovery_window_us", ms_to_us),
    "retry_limit": ("retry_limit", int),
    "session_stagger_ms": ("session_stagger_us", ms_to_us),
    "failure_interval_ms": ("failure_interval_us", ms_to_us),
    "failure_downtime_ms": ("failure_downtime_us", ms_to_us),
    "overload_at_ms": ("overload_at_us", ms_to_us),
    "overload_edge_capacity": ("overload_edge_capacity", int),
    "overload_edge_servers": ("overload_edge_servers", int),
    "overload_cloud_capacity": ("overload_cloud_capacity", int),
    "overload_cloud_servers": ("overload_cloud_servers", int),
}


def _sub_fields(value: str, context: str) -> dict[str, str]:
    out = {}
    for token in value.split():
        key, sep, val = token.partition("=")
        if not sep:
            raise ConfigError(f"{context}: bad token {token!r}")
        out[key] = val
    return out


def _parse_anchor(value: str) -> Anchor:
    f = _sub_fields(value, "anchor")
    required = {"id", "site", "region", "tiers", "capacity", "path_ms"}
    allowed = required | {"servers"}
    missing = required - f.keys()
    unknown = f.keys() - allowed
    if missing:
        raise ConfigError(f"anchor: missing {sorted(missing)}")
    if unknown:
        raise ConfigError(f"anchor: unknown fields {sorted(unknown)}")
    try:
        return Anchor(
            anchor_id=f["id"],
            site_class=SiteClass(f["site"]),
            region=f["region"],
            tiers_offered=tuple(f["tiers"].split(",")),
            capacity=int(f["capacity"]),
            path_latency_us=ms_to_us(f["path_ms"]),
            servers=int(f.get("servers", "1")),
        )
    except (ValueError, InvalidField) as exc:
        raise ConfigError(f"anchor: {exc}") from exc


def _parse_tier(value: str) -> ModelTier:
    f = _sub_fields(value, "tier")
    required = {"id", "mean_ms", "cost"}
    allowed = required | {"jitter"}
    missing = required - f.keys()
    unknown = f.keys() - allowed
    if missing:
        raise ConfigError(f"tier: missing {sorted(missing)}")
    if unknown:
        raise ConfigError(f"tier: unknown fields {sorted(unknown)}")
    try:
        return ModelTier(
            tier_id=f["id"],
            service_mean_us=ms_to_us(f["mean_ms"]),
            service_jitter=f.get("jitter", "exp") == "exp",
            cost=float(f["cost"]),
        )
    except (ValueError, InvalidField) as exc:
        raise ConfigError(f"tier: {exc}") from exc


def _parse_fail(value: str) -> FailureSpec:
    f = _sub_fields(value, "fail")
    required = {"t_ms", "anchor", "kind"}
    allowed = required | {"recover_ms"}
    missing = required - f.keys()
    unknown = f.keys() - allowed
    if missing:
        raise ConfigError(f"fail: missing {sorted(missing)}")
    if unknown:
        raise ConfigError(f"fail: unknown fields {sorted(unknown)}")
    return FailureSpec(
        at_us=ms_to_us(f["t_ms"]),
        anchor_id=f["anchor"],
        kind=f["kind"],
        recover_after_us=ms_to_us(f["recover_ms"]) if "recover_ms" in f else 0,
    )


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    values: dict = {}
    anchors: list[Anchor] = []
    tiers: list[ModelTier] = []
    fails: list[FailureSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key = key.strip()
        value = value.strip()
        try:
            if key == "anchor":
                anchors.append(_parse_anchor(value))
            elif key == "tier":
                tiers.append(_parse_tier(value))
            elif key == "fail":
                fails.append(_parse_fail(value))
            elif key in _SCALARS:
                attr, conv = _SCALARS[key]
                values[attr] = conv(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        except (ValueError, InvalidField) as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from exc
    if "setup_id" not in values:
        values["setup_id"] = "Custom"
    if "horizon_us" not in values:
        raise ConfigError(f"{source}: horizon_ms is required")
    if "arrival_rate" not in values:
        raise ConfigError(f"{source}: arrival_rate is required")
    cfg = ScenarioConfig(anchors=anchors, tiers=tiers, failure_schedule=fails, **values)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=path)
