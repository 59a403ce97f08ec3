"""Two-tier leaf/spine fabric with per-GPU locality classes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class Tier(str, enum.Enum):
    INTRA_NODE = "IntraNode"
    LEAF = "Leaf"
    SPINE = "Spine"


class Locality(str, enum.Enum):
    NEAR = "Near"
    FAR = "Far"


class TopologyError(ValueError):
    pass


GBPS = 1e9 / 8.0  # bytes/s per Gb/s


@dataclass(frozen=True)
class TopologyConfig:
    nodes: int = 1
    gpus_per_node: int = 1
    leaves: int | None = None
    nodes_per_leaf: int | None = None
    uplinks_per_leaf: int = 1
    link_bandwidth_gbps: float = 100.0
    spine_bandwidth_gbps: float | None = None
    link_latency_us: float = 1.0
    intra_node_bandwidth_gbps: float = 800.0
    far_path_penalty: float = 1.0
    asymmetric_routing: bool = False


@dataclass(frozen=True)
class Link:
    id: str
    bandwidth: float
    latency: float
    tier: Tier

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise TopologyError(f"link {self.id}: bandwidth must be > 0")
        if self.latency < 0:
            raise TopologyError(f"link {self.id}: latency must be >= 0")


@dataclass(frozen=True)
class NodeSpec:
    index: int
    leaf: int
    gpus_per_node: int
    nic_uplink: str | None
    locality: tuple[Locality, ...]
    intra_node_bandwidth: float
    far_path_penalty: float = 1.0

    def __post_init__(self):
        if self.gpus_per_node < 1:
            raise TopologyError("gpus_per_node must be >= 1")
        if self.far_path_penalty < 1.0:
            raise TopologyError("far_path_penalty must be >= 1")


@dataclass(frozen=True)
class SwitchTier:
    name: str
    tier: Tier
    switches: int
    downlinks: tuple[str, ...]
    uplinks: tuple[str, ...]


@dataclass(frozen=True)
class Route:
    src_rank: int
    dst_rank: int
    links: tuple[str, ...]

    @property
    def intra_node(self) -> bool:
        return not self.links


@dataclass(frozen=True)
class Topology:
    nodes: tuple[NodeSpec, ...]
    tiers: tuple[SwitchTier, ...]
    links: tuple[Link, ...]
    rank_count: int
    uplinks_per_leaf: int
    asymmetric_routing: bool = False
    ports: tuple[str | None, ...] = field(default=())

    @cached_property
    def link_index(self) -> dict[str, int]:
        return {link.id: i for i, link in enumerate(self.links)}

    @property
    def fabric_links(self) -> tuple[Link, ...]:
        return tuple(l for l in self.links if l.tier is not Tier.INTRA_NODE)

    def placement(self, rank: int) -> tuple[int, int]:
        """(node, local GPU index) of ``rank``; ranks are node-major."""
        self._check_rank(rank)
        gpn = self.nodes[0].gpus_per_node
        return rank // gpn, rank % gpn

    def locality(self, rank: int) -> Locality:
        node, gpu = self.placement(rank)
        return self.nodes[node].locality[gpu]

    def _check_rank(self, rank: int):
        if not 0 <= rank < self.rank_count:
            raise TopologyError(f"unknown rank {rank}")

    def resources(self, route: Route) -> list[int]:
        """Directional resource indices (2*link + dir) used by a transfer.

        dir 0 is away from the GPU/host (towards the spine), dir 1 towards it.
        GPU attachment ports are included even though they are not part of
        the fabric route.
        """
        idx = self.link_index
        res = []
        src_port = self.ports[route.src_rank] if self.ports else None
        dst_port = self.ports[route.dst_rank] if self.ports else None
        if src_port is not None:
            res.append(2 * idx[src_port])
        n = len(route.links)
        for i, lid in enumerate(route.links):
            # first half of the path climbs, second half descends
            res.append(2 * idx[lid] + (0 if i < n // 2 else 1))
        if dst_port is not None:
            res.append(2 * idx[dst_port] + 1)
        return res

    def latency(self, route: Route) -> float:
        idx = self.link_index
        return float(sum(self.links[idx[l]].latency for l in route.links))


def _pick_spine(src: int, dst: int, uplinks: int, asymmetric: bool) -> int:
    if uplinks == 1:
        return 0
    if asymmetric:
        a, b = src, dst
    else:
        a, b = min(src, dst), max(src, dst)
    h = (a * 0x9E3779B1 + b * 0x85EBCA77 + (0x27D4EB2F if asymmetric else 0)) & 0xFFFFFFFF
    h ^= h >> 15
    h = (h * 0x2C1B3C6D) & 0xFFFFFFFF
    h ^= h >> 12
    return h % uplinks


def build_topology(spec: TopologyConfig) -> Topology:
    """Build the leaf/spine fabric described by ``spec``.

    Nodes are packed onto leaves in order. Each node has one NIC uplink to its
    leaf (Leaf tier); each leaf has ``uplinks_per_leaf`` links, one to each
    spine switch (Spine tier). A single-node build has no fabric at all.
    GPUs in the upper half of a multi-GPU node are Far from the NIC.
    """
    if spec.nodes < 1:
        raise TopologyError("nodes must be >= 1")
    if spec.gpus_per_node < 1:
        raise TopologyError("gpus_per_node must be >= 1")
    if spec.uplinks_per_leaf < 1:
        raise TopologyError("uplinks_per_leaf must be >= 1")
    for name in ("link_bandwidth_gbps", "intra_node_bandwidth_gbps"):
        if not getattr(spec, name) > 0:
            raise TopologyError(f"{name} must be > 0")
    spine_bw = spec.link_bandwidth_gbps if spec.spine_bandwidth_gbps is None else spec.spine_bandwidth_gbps
    if not spine_bw > 0:
        raise TopologyError("spine_bandwidth_gbps must be > 0")
    if spec.link_latency_us < 0:
        raise TopologyError("link_latency_us must be >= 0")
    if spec.far_path_penalty < 1.0:
        raise TopologyError("far_path_penalty must be >= 1")

    leaves, per_leaf = _leaf_layout(spec)
    lat = spec.link_latency_us * 1e-6
    links: list[Link] = []
    nodes: list[NodeSpec] = []
    ports: list[str | None] = []
    gpn = spec.gpus_per_node
    far_from = (gpn + 1) // 2 if gpn > 1 else gpn

    for n in range(spec.nodes):
        uplink = None
        if spec.nodes > 1:
            uplink = f"n{n}-leaf{n // per_leaf}"
            links.append(Link(uplink, spec.link_bandwidth_gbps * GBPS, lat, Tier.LEAF))
        loc = tuple(Locality.FAR if g >= far_from else Locality.NEAR for g in range(gpn))
        for g in range(gpn):
            if gpn > 1:
                pid = f"n{n}-gpu{g}"
                bw = spec.intra_node_bandwidth_gbps * GBPS
                if loc[g] is Locality.FAR:
                    bw /= spec.far_path_penalty
                links.append(Link(pid, bw, 0.0, Tier.INTRA_NODE))
                ports.append(pid)
            else:
                ports.append(None)
        nodes.append(NodeSpec(n, n // per_leaf, gpn, uplink, loc,
                              spec.intra_node_bandwidth_gbps * GBPS, spec.far_path_penalty))

    leaf_down = [tuple(nd.nic_uplink for nd in nodes if nd.leaf == l and nd.nic_uplink) for l in range(leaves)]
    leaf_up: list[tuple[str, ...]] = []
    if spec.nodes > 1:
        for l in range(leaves):
            ups = []
            for k in range(spec.uplinks_per_leaf):
                lid = f"leaf{l}-spine{k}"
                links.append(Link(lid, spine_bw * GBPS, lat, Tier.SPINE))
                ups.append(lid)
            leaf_up.append(tuple(ups))
    else:
        leaf_up = [()]

    tiers = (
        SwitchTier("leaf", Tier.LEAF, leaves,
                   tuple(x for d in leaf_down for x in d), tuple(x for u in leaf_up for x in u)),
        SwitchTier("spine", Tier.SPINE, spec.uplinks_per_leaf if spec.nodes > 1 else 0,
                   tuple(x for u in leaf_up for x in u), ()),
    )
    ids = [l.id for l in links]
    if len(set(ids)) != len(ids):
        raise TopologyError("duplicate link ids")
    return Topology(tuple(nodes), tiers, tuple(links), spec.nodes * gpn,
                    spec.uplinks_per_leaf, spec.asymmetric_routing,
                    tuple(ports) if gpn > 1 else ())


def _leaf_layout(spec: TopologyConfig) -> tuple[int, int]:
    if spec.leaves is not None and spec.nodes_per_leaf is not None:
        if spec.leaves * spec.nodes_per_leaf != spec.nodes:
            raise TopologyError("leaves * nodes_per_leaf must equal nodes")
        return spec.leaves, spec.nodes_per_leaf
    if spec.nodes_per_leaf is not None:
        npl = spec.nodes_per_leaf
        if npl < 1:
            raise TopologyError("nodes_per_leaf must be >= 1")
        if spec.nodes <= npl:
            return 1, spec.nodes
        if spec.nodes % npl:
            raise TopologyError(f"nodes ({spec.nodes}) not divisible by nodes_per_leaf ({npl})")
        return spec.nodes // npl, npl
    leaves = 1 if spec.leaves is None else spec.leaves
    if leaves < 1:
        raise TopologyError("leaves must be >= 1")
    if spec.nodes % leaves:
        raise TopologyError(f"nodes ({spec.nodes}) not divisible by leaves ({leaves})")
    return leaves, spec.nodes // leaves


def route(topology: Topology, src_rank: int, dst_rank: int) -> Route:
    """Deterministic path between two ranks.

    Same-node pairs get an empty fabric path; pairs under one leaf use both
    NIC uplinks; pairs under different leaves additionally cross one spine,
    chosen by hashing the rank pair over the leaf uplinks.
    """
    topology._check_rank(src_rank)
    topology._check_rank(dst_rank)
    if src_rank == dst_rank:
        raise TopologyError("self routes are not supported")
    sn, _ = topology.placement(src_rank)
    dn, _ = topology.placement(dst_rank)
    if sn == dn:
        return Route(src_rank, dst_rank, ())
    a, b = topology.nodes[sn], topology.nodes[dn]
    if a.leaf == b.leaf:
        return Route(src_rank, dst_rank, (a.nic_uplink, b.nic_uplink))
    k = _pick_spine(src_rank, dst_rank, topology.uplinks_per_leaf, topology.asymmetric_routing)
    return Route(src_rank, dst_rank,
                 (a.nic_uplink, f"leaf{a.leaf}-spine{k}", f"leaf{b.leaf}-spine{k}", b.nic_uplink))


def oversubscription_ratio(topology: Topology, tier: str) -> float:
    """Aggregate downlink over uplink bandwidth of a switch tier."""
    for t in topology.tiers:
        if t.name == tier or t.tier.value == tier:
            break
    else:
        raise TopologyError(f"unknown tier {tier!r}")
    if not t.uplinks:
        raise TopologyError(f"tier {tier!r} has no uplinks")
    idx = topology.link_index
    down = sum(topology.links[idx[l]].bandwidth for l in t.downlinks)
    up = sum(topology.links[idx[l]].bandwidth for l in t.uplinks)
    return down / up


def resource_capacities(topology: Topology) -> np.ndarray:
    """Capacity per directional resource (two per link)."""
    return np.repeat(np.array([l.bandwidth for l in topology.links], dtype=np.float64), 2)
