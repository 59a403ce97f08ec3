"""Scenario configuration: JSON schema, validation and defaults."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .topology import TopologyConfig, TopologyError, build_topology
from .traffic import BackgroundConfig
from .workload import Jitter, WorkloadModel


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TopologySection(_Section):
    nodes: int = Field(1, ge=1)
    gpus_per_node: int = Field(1, ge=1)
    leaves: Optional[int] = Field(None, ge=1)
    nodes_per_leaf: Optional[int] = Field(None, ge=1)
    uplinks_per_leaf: int = Field(1, ge=1)
    link_bandwidth_gbps: float = Field(100.0, gt=0)
    spine_bandwidth_gbps: Optional[float] = Field(None, gt=0)
    link_latency_us: float = Field(1.0, ge=0)
    intra_node_bandwidth_gbps: float = Field(800.0, gt=0)
    far_path_penalty: float = Field(1.0, ge=1)
    asymmetric_routing: bool = False

    def build(self):
        return build_topology(TopologyConfig(**self.model_dump()))


class WorkloadSection(_Section):
    base_compute_ms: float = Field(100.0, gt=0)
    jitter: Literal["None", "LogNormal", "Gamma"] = "None"
    jitter_sigma: float = Field(0.05, ge=0)
    gamma_shape: float = Field(100.0, gt=0)
    straggler_prob: float = Field(0.0, ge=0, le=1)
    straggler_slowdown: float = Field(1.0, ge=1)
    locality_penalty: float = Field(1.0, ge=1)
    per_rank_batch: int = Field(32, ge=1)
    sticky_stragglers: bool = False

    def model(self) -> WorkloadModel:
        return WorkloadModel(
            base_compute=self.base_compute_ms * 1e-3, jitter=Jitter(self.jitter),
            jitter_sigma=self.jitter_sigma, gamma_shape=self.gamma_shape,
            straggler_prob=self.straggler_prob, straggler_slowdown=self.straggler_slowdown,
            locality_penalty=self.locality_penalty, per_rank_batch=self.per_rank_batch,
            sticky_stragglers=self.sticky_stragglers)


class CollectiveSection(_Section):
    algorithm: Literal["Ring", "HierarchicalRing"] = "Ring"
    message_bytes: float = Field(64 * 2**20, ge=0)
    ring_order: Optional[list[int]] = None
    # bytes/s a stalled rank piles up while blocked, released when it resumes
    stall_backlog_gbps: float = Field(0.0, ge=0)
    stall_backlog_cap_mb: float = Field(0.0, ge=0)


class BackgroundSection(_Section):
    leaf_load: float = Field(0.0, ge=0, lt=1)
    spine_load: float = Field(0.0, ge=0, lt=1)
    on_ms: float = Field(0.0, ge=0)
    off_ms: float = Field(0.0, ge=0)
    seed_offset: int = Field(0, ge=0)
    link_ids: list[str] = Field(default_factory=list)
    link_load: float = Field(0.0, ge=0, lt=1)

    @model_validator(mode="after")
    def _periods(self):
        if self.off_ms > 0 and self.on_ms <= 0:
            raise ValueError("on_ms must be > 0 when off_ms > 0")
        return self

    def pattern(self) -> BackgroundConfig:
        return BackgroundConfig(self.leaf_load, self.spine_load, self.on_ms, self.off_ms,
                                self.seed_offset, tuple(self.link_ids), self.link_load)


class CoordinationSection(_Section):
    enabled: bool = False
    window_size: int = Field(16, ge=1)
    skew_threshold: float = Field(0.05, gt=0)
    max_delay_fraction: float = Field(0.25, ge=0)
    target_quantile: float = Field(0.5, ge=0, le=1)
    cooldown: int = Field(10, ge=1)
    estimator: Literal["local", "omniscient"] = "local"


class DiagnosticsSection(_Section):
    sync_cutoff: float = Field(0.25, ge=0, le=1)
    fabric_cutoff: float = Field(0.25, ge=0, le=1)
    locality_cutoff: float = Field(0.25, ge=0, le=1)
    runtime_cutoff: float = Field(0.25, ge=0, le=1)
    runtime_scale: float = Field(0.03, gt=0)


class ScenarioConfig(_Section):
    name: str = "scenario"
    topology: TopologySection = TopologySection()
    workload: WorkloadSection = WorkloadSection()
    collective: CollectiveSection = CollectiveSection()
    background: BackgroundSection = BackgroundSection()
    coordination: CoordinationSection = CoordinationSection()
    diagnostics: DiagnosticsSection = DiagnosticsSection()
    iterations: int = Field(50, ge=0)
    warmup: int = Field(5, ge=0)
    seed: int = Field(0, ge=0)
    repeats: int = Field(5, ge=1)

    @property
    def rank_count(self) -> int:
        return self.topology.nodes * self.topology.gpus_per_node

    @model_validator(mode="after")
    def _cross_checks(self):
        order = self.collective.ring_order
        if order is not None and sorted(order) != list(range(self.rank_count)):
            raise ValueError(f"collective.ring_order must be a permutation of 0..{self.rank_count - 1}")
        return self

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"topology.nodes": 8}``; revalidated."""
        data = self.model_dump(mode="json")
        for path, value in changes.items():
            keys = path.split(".")
            node = data
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = value
        if "topology.nodes" in changes and data["collective"].get("ring_order") is not None:
            data["collective"]["ring_order"] = None
        return load_scenario(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def load_scenario(data: dict) -> ScenarioConfig:
    """Validate a scenario mapping, fill defaults and check the fabric builds."""
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None
    try:
        cfg.topology.build()
    except TopologyError as err:
        raise ConfigError(f"topology: {err}") from None
    try:
        from .traffic import background_flows
        background_flows(cfg.topology.build(), cfg.background.pattern())
    except ValueError as err:
        raise ConfigError(f"background: {err}") from None
    return cfg


def parse_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: malformed JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return load_scenario(data)
