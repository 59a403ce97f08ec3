"""Fluid max-min fair bandwidth sharing over the fabric.

Transfers are fluid flows whose rates are recomputed whenever the active set
changes (a transfer starts or drains, or a background source toggles).
Background traffic joins the allocation as demand-capped synthetic flows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .topology import Route, Tier, Topology, resource_capacities, route as make_route


@dataclass
class Transfer:
    id: int
    src_rank: int
    dst_rank: int
    bytes: float
    start_time: float
    route: Route
    remaining_bytes: float = None

    def __post_init__(self):
        if not self.bytes > 0:
            raise ValueError("transfer bytes must be positive")
        if self.remaining_bytes is None:
            self.remaining_bytes = float(self.bytes)
        if not 0 <= self.remaining_bytes <= self.bytes:
            raise ValueError("remaining_bytes must lie in [0, bytes]")


@dataclass(frozen=True)
class BackgroundFlow:
    """Synthetic cross-traffic on one direction of one link."""

    link_id: str
    direction: int
    load: float
    on_s: float = 0.0
    off_s: float = 0.0
    phase_s: float = 0.0

    def active_at(self, t: float) -> bool:
        if self.off_s <= 0:
            return True
        period = self.on_s + self.off_s
        return (t - self.phase_s) % period < self.on_s


@dataclass(frozen=True)
class BackgroundConfig:
    leaf_load: float = 0.0
    spine_load: float = 0.0
    on_ms: float = 0.0
    off_ms: float = 0.0
    seed_offset: int = 0
    link_ids: tuple[str, ...] = ()
    link_load: float = 0.0


@dataclass
class NetState:
    topology: Topology
    transfers: dict[int, Transfer] = field(default_factory=dict)
    background: list[BackgroundFlow] = field(default_factory=list)
    rates: dict[int, float] = field(default_factory=dict)

    def link_transfers(self) -> dict[int, set[int]]:
        """Active transfer ids per directional resource."""
        out: dict[int, set[int]] = {}
        for tid, tr in self.transfers.items():
            for k in self.topology.resources(tr.route):
                out.setdefault(k, set()).add(tid)
        return out


def maxmin_allocation(flow_resources, capacities, demands=None) -> np.ndarray:
    """Max-min fair rates for flows given as lists of resource indices.

    ``demands`` caps individual flows (``inf`` for elastic flows).
    """
    cap = np.asarray(capacities, dtype=np.float64)
    nflow = len(flow_resources)
    width = max([len(r) for r in flow_resources] + [1])
    res = np.full((nflow, width), -1, np.int64)
    lens = np.zeros(nflow, np.int64)
    for i, r in enumerate(flow_resources):
        if not len(r):
            raise ValueError(f"flow {i} crosses no resource")
        res[i, :len(r)] = r
        lens[i] = len(r)
    dem = np.full(nflow, np.inf) if demands is None else np.asarray(demands, dtype=np.float64)
    rate = np.zeros(nflow)
    _kernels._alloc(np.ones(nflow, np.bool_), res, lens, dem, cap, rate)
    return rate


def _background_arrays(topology: Topology, flows, width: int):
    idx = topology.link_index
    nbg = len(flows)
    bg_res = np.full((nbg, width), -1, np.int64)
    bg_len = np.ones(nbg, np.int64)
    dem = np.zeros(nbg)
    on = np.zeros(nbg)
    off = np.zeros(nbg)
    phase = np.zeros(nbg)
    for i, b in enumerate(flows):
        li = idx[b.link_id]
        bg_res[i, 0] = 2 * li + b.direction
        dem[i] = b.load * topology.links[li].bandwidth
        on[i], off[i], phase[i] = b.on_s, b.off_s, b.phase_s
    return bg_res, bg_len, dem, on, off, phase


def recompute_rates(net: NetState, topology: Topology | None = None, now: float = 0.0) -> dict[int, float]:
    """Max-min fair rate of every active transfer at time ``now``.

    Background flows that are in their on-phase take part as demand-capped
    participants. The result is also stored on ``net.rates``.
    """
    topo = topology or net.topology
    ids = sorted(net.transfers)
    flows = [topo.resources(net.transfers[i].route) for i in ids]
    bgs = [b for b in net.background if b.active_at(now) and b.load > 0]
    flows += [[2 * topo.link_index[b.link_id] + b.direction] for b in bgs]
    demands = [np.inf] * len(ids) + [b.load * topo.links[topo.link_index[b.link_id]].bandwidth for b in bgs]
    if not flows:
        net.rates = {}
        return {}
    rates = maxmin_allocation(flows, resource_capacities(topo), demands)
    net.rates = {i: float(r) for i, r in zip(ids, rates)}
    return dict(net.rates)


def inject_background(net: NetState, pattern: BackgroundConfig, now: float = 0.0, seed: int = 0) -> NetState:
    """Attach the background sources described by ``pattern`` to ``net``.

    Each affected link gets one source per direction. On/off phases are
    drawn from ``seed + pattern.seed_offset`` so runs stay reproducible;
    ``now`` shifts the phase origin.
    """
    flows = background_flows(net.topology, pattern, seed, origin=now)
    net.background.extend(flows)
    return net


def background_flows(topology: Topology, pattern: BackgroundConfig, seed: int = 0,
                     origin: float = 0.0) -> list[BackgroundFlow]:
    for name in ("leaf_load", "spine_load", "link_load"):
        v = getattr(pattern, name)
        if not 0.0 <= v < 1.0:
            raise ValueError(f"background.{name} must lie in [0, 1), got {v}")
    if pattern.on_ms < 0 or pattern.off_ms < 0:
        raise ValueError("background on/off periods must be >= 0")
    if pattern.off_ms > 0 and pattern.on_ms <= 0:
        raise ValueError("background.on_ms must be > 0 when off_ms > 0")
    targets: list[tuple[str, float]] = []
    for link in topology.links:
        if link.tier is Tier.LEAF and pattern.leaf_load > 0:
            targets.append((link.id, pattern.leaf_load))
        elif link.tier is Tier.SPINE and pattern.spine_load > 0:
            targets.append((link.id, pattern.spine_load))
    known = topology.link_index
    for lid in pattern.link_ids:
        if lid not in known:
            raise ValueError(f"background.link_ids: unknown link {lid!r}")
        if pattern.link_load > 0:
            targets.append((lid, pattern.link_load))
    if not targets:
        return []
    on, off = pattern.on_ms * 1e-3, pattern.off_ms * 1e-3
    rng = np.random.default_rng([seed & 0xFFFFFFFF, pattern.seed_offset & 0xFFFFFFFF, 0xB6])
    flows = []
    for lid, load in targets:
        for direction in (0, 1):
            phase = origin + (rng.random() * (on + off) if off > 0 else 0.0)
            flows.append(BackgroundFlow(lid, direction, load, on, off, phase))
    return flows


def simulate_transfers(transfers: list[Transfer], topology: Topology,
                       background: list[BackgroundFlow] = (), t0: float = 0.0) -> dict[int, float]:
    """Completion time of each independent transfer under fluid max-min sharing.

    Completion is the instant the last byte arrives: the bytes drain at the
    piecewise-constant allocated rate, then the route latency is added.
    """
    if not transfers:
        return {}
    n = len(transfers)
    routes = [topology.resources(t.route) for t in transfers]
    width = max(max(len(r) for r in routes), 1)
    route_res = np.full((n, width), -1, np.int64)
    route_len = np.zeros(n, np.int64)
    route_lat = np.zeros(n)
    for i, (t, r) in enumerate(zip(transfers, routes)):
        if not r:
            raise ValueError(f"transfer {t.id} crosses no resource")
        route_res[i, :len(r)] = r
        route_len[i] = len(r)
        route_lat[i] = topology.latency(t.route)
    entry = np.array([t.start_time for t in transfers], dtype=np.float64)
    base = entry.min()
    entry = entry - base
    op_bytes = np.array([t.remaining_bytes for t in transfers], dtype=np.float64)
    out = _execute(entry, op_bytes, np.arange(n, dtype=np.int64), np.full((n, 1), -1, np.int64),
                   np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64)[:, None],
                   np.ones(n, np.int64), route_res, route_len, route_lat,
                   resource_capacities(topology), topology, list(background), t0 + base, 0.0, 0.0)
    deliver = out["op_deliver"]
    return {t.id: float(base + deliver[i]) for i, t in enumerate(transfers)}


def transfer_completion_time(transfer: Transfer, net: NetState, topology: Topology | None = None,
                             now: float = 0.0) -> float:
    """Completion time of ``transfer`` given the other transfers active in ``net``."""
    topo = topology or net.topology
    others = [t for t in net.transfers.values() if t.id != transfer.id]
    times = simulate_transfers([transfer] + others, topo, net.background, t0=now)
    return times[transfer.id]


def _execute(entry, op_bytes, op_route, op_dep, op_recv, agent_ops, agent_nops,
             route_res, route_len, route_lat, cap, topology, background, t0,
             backlog_rate, backlog_cap):
    width = route_res.shape[1]
    bg_res, bg_len, bg_dem, bg_on, bg_off, bg_phase = _background_arrays(topology, background, width)
    nops = op_bytes.shape[0]
    n = entry.shape[0]
    op_start = np.empty(nops)
    op_deliver = np.empty(nops)
    exit_t = np.empty(n)
    wait_t = np.empty(n)
    res_busy = np.empty(cap.shape[0])
    res_cont = np.empty(cap.shape[0])
    events = _kernels.run_dag(entry, op_bytes, op_route, op_dep, op_recv, agent_ops, agent_nops,
                              route_res, route_len, route_lat, cap,
                              bg_res, bg_len, bg_dem, bg_on, bg_off, bg_phase, float(t0),
                              float(backlog_rate), float(backlog_cap),
                              op_start, op_deliver, exit_t, wait_t, res_busy, res_cont)
    if np.isnan(op_deliver).any():
        raise RuntimeError("transfer DAG did not complete (dependency cycle or event limit)")
    return {"op_start": op_start, "op_deliver": op_deliver, "exit": exit_t, "wait": wait_t,
            "res_busy": res_busy, "res_contended": res_cont, "events": events}


_ids = itertools.count()


def new_transfer(topology: Topology, src: int, dst: int, nbytes: float, start: float = 0.0) -> Transfer:
    return Transfer(next(_ids), src, dst, nbytes, start, make_route(topology, src, dst))
