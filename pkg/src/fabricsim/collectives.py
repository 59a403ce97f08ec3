"""Ring and hierarchical all-reduce as dependency-ordered transfer schedules."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .topology import Topology, resource_capacities, route as make_route
from .traffic import BackgroundFlow, _execute


class Algorithm(str, enum.Enum):
    RING = "Ring"
    HIERARCHICAL_RING = "HierarchicalRing"


class CollectiveError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkSchedule:
    """Transfers of one all-reduce, grouped into steps.

    ``steps[s]`` lists ``(sender, receiver, bytes)`` with ranks taken from
    ``participants``. Op ``o`` belongs to the agent at ``op_agent[o]`` and may
    start only after op ``op_dep[o]`` (if not -1) is delivered and the agent's
    own previous op is delivered.
    """

    algorithm: Algorithm
    participants: tuple[int, ...]
    message_bytes: float
    steps: tuple[tuple[tuple[int, int, float], ...], ...]
    op_agent: tuple[int, ...]
    op_recv: tuple[int, ...]
    op_bytes: tuple[float, ...]
    op_dep: tuple[int, ...]

    @property
    def p(self) -> int:
        return len(self.participants)

    def bytes_sent(self) -> dict[int, float]:
        out = {r: 0.0 for r in self.participants}
        for step in self.steps:
            for snd, _, b in step:
                out[snd] += b
        return out


def _ring_ops(agents, chunk, nsteps, dep_first=None):
    """Op lists for a ring over ``agents`` (indices into the participant list)."""
    p = len(agents)
    ops = []  # (agent, recv, bytes, dep) with dep as an index into ``ops``
    for s in range(nsteps):
        for i in range(p):
            dep = -1
            if s > 0:
                dep = (s - 1) * p + (i - 1) % p
            elif dep_first is not None:
                dep = dep_first[i]
            ops.append((agents[i], agents[(i + 1) % p], chunk, dep))
    return ops


def _build(algorithm, participants, message_bytes, phases):
    steps = []
    op_agent, op_recv, op_bytes, op_dep = [], [], [], []
    for phase in phases:
        by_step: dict[int, list] = {}
        for a, r, b, dep, s in phase:
            op_agent.append(a)
            op_recv.append(r)
            op_bytes.append(b)
            op_dep.append(dep)
            by_step.setdefault(s, []).append((participants[a], participants[r], b))
        steps.extend(tuple(by_step[s]) for s in sorted(by_step))
    return ChunkSchedule(algorithm, tuple(participants), float(message_bytes), tuple(steps),
                         tuple(op_agent), tuple(op_recv), tuple(op_bytes), tuple(op_dep))


def plan_ring(participants, message_bytes: float) -> ChunkSchedule:
    """Reduce-scatter followed by all-gather around ``participants`` in order.

    ``2(p-1)`` steps; every rank sends ``M/p`` bytes per step to its successor.
    """
    participants = [int(r) for r in participants]
    if not participants:
        raise CollectiveError("need at least one participant")
    if len(set(participants)) != len(participants):
        raise CollectiveError("duplicate participants")
    if message_bytes < 0:
        raise CollectiveError("message_bytes must be >= 0")
    p = len(participants)
    if p == 1:
        return _build(Algorithm.RING, participants, message_bytes, [])
    nsteps = 2 * (p - 1)
    ops = _ring_ops(list(range(p)), message_bytes / p, nsteps)
    phase = [(a, r, b, d, k // p) for k, (a, r, b, d) in enumerate(ops)]
    return _build(Algorithm.RING, participants, message_bytes, [phase])


def plan_hierarchical(topology: Topology, participants, message_bytes: float) -> ChunkSchedule:
    """Intra-node ring all-reduce, leader ring across nodes, intra-node all-gather.

    Participants must cover whole nodes; the first listed GPU of each node is
    its leader.
    """
    participants = [int(r) for r in participants]
    if message_bytes < 0:
        raise CollectiveError("message_bytes must be >= 0")
    if len(set(participants)) != len(participants) or not participants:
        raise CollectiveError("participants must be unique and non-empty")
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(participants):
        groups.setdefault(topology.placement(r)[0], []).append(i)
    gsize = {len(g) for g in groups.values()}
    if len(gsize) != 1:
        raise CollectiveError("hierarchical ring needs the same GPU count on every node")
    g = gsize.pop()
    nodes = list(groups.values())
    n = len(nodes)
    phases = []
    op_total = 0
    last_intra = {}
    if g > 1:
        ph = []
        for members in nodes:
            ops = _ring_ops(members, message_bytes / g, 2 * (g - 1))
            base = op_total + len(ph)
            for k, (a, r, b, d) in enumerate(ops):
                if a == members[0]:
                    last_intra[a] = base + k
                ph.append((a, r, b, -1 if d < 0 else base + d, k // g))
        phases.append(ph)
        op_total += len(ph)
    leaders = [m[0] for m in nodes]
    leader_last = {}
    if n > 1:
        ops = _ring_ops(leaders, message_bytes / n, 2 * (n - 1))
        base = op_total
        ph = [(a, r, b, -1 if d < 0 else base + d, k // n) for k, (a, r, b, d) in enumerate(ops)]
        for k, (a, *_rest) in enumerate(ph):
            leader_last[a] = base + k
        phases.append(ph)
        op_total += len(ph)
    if g > 1:
        ph = []
        for members in nodes:
            gate = leader_last.get(members[0], last_intra.get(members[0]))
            first = [gate if gate is not None else -1] * g
            ops = _ring_ops(members, message_bytes / g, g - 1, dep_first=first)
            base = op_total + len(ph)
            for k, (a, r, b, d) in enumerate(ops):
                if k < g:
                    dep = d
                else:
                    dep = base + d
                ph.append((a, r, b, dep, k // g))
        phases.append(ph)
        op_total += len(ph)
    return _build(Algorithm.HIERARCHICAL_RING, participants, message_bytes, phases)


def analytic_ring_cost(p: int, message_bytes: float, bandwidth: float, latency: float) -> float:
    """Idle-fabric ring all-reduce time: ``2(p-1)a + 2(p-1)/p * M/B``."""
    if p < 1:
        raise CollectiveError("p must be >= 1")
    if not bandwidth > 0:
        raise CollectiveError("bandwidth must be > 0")
    if p == 1:
        return 0.0
    return 2 * (p - 1) * latency + (2 * (p - 1) / p) * (message_bytes / bandwidth)


def analytic_allgather_cost(p: int, message_bytes: float, bandwidth: float, latency: float) -> float:
    if p <= 1:
        return 0.0
    return (p - 1) * latency + ((p - 1) / p) * (message_bytes / bandwidth)


def analytic_hierarchical_cost(gpus: int, nodes: int, message_bytes: float,
                               intra_bandwidth: float, intra_latency: float,
                               inter_bandwidth: float, inter_latency: float) -> float:
    return (analytic_ring_cost(gpus, message_bytes, intra_bandwidth, intra_latency)
            + analytic_ring_cost(nodes, message_bytes, inter_bandwidth, inter_latency)
            + analytic_allgather_cost(gpus, message_bytes, intra_bandwidth, intra_latency))


@dataclass
class CollectiveOutcome:
    """Per-participant timestamps (participant order), relative to the caller's origin."""

    participants: tuple[int, ...]
    entry: np.ndarray
    exit: np.ndarray
    wait: np.ndarray
    op_start: np.ndarray
    op_deliver: np.ndarray
    op_agent: np.ndarray
    res_busy: np.ndarray
    res_contended: np.ndarray
    bytes_sent: np.ndarray

    def spans(self, agent: int):
        """(phase, start, end) segments from entry to exit for one participant."""
        out = []
        cur = self.entry[agent]
        for o in np.flatnonzero(self.op_agent == agent):
            s, d = self.op_start[o], self.op_deliver[o]
            if s > cur:
                out.append(("wait", cur, s))
            out.append(("transfer", s, d))
            cur = d
        if self.exit[agent] > cur:
            out.append(("wait", cur, self.exit[agent]))
        return out


class CompiledCollective:
    """Schedule bound to a topology: routes resolved into kernel arrays."""

    def __init__(self, schedule: ChunkSchedule, topology: Topology):
        for r in schedule.participants:
            topology._check_rank(r)
        self.schedule = schedule
        self.topology = topology
        parts = schedule.participants
        p = len(parts)
        pairs: dict[tuple[int, int], int] = {}
        route_list = []
        op_route = []
        for a, r in zip(schedule.op_agent, schedule.op_recv):
            key = (parts[a], parts[r])
            if key not in pairs:
                pairs[key] = len(route_list)
                route_list.append(make_route(topology, *key))
            op_route.append(pairs[key])
        res = [topology.resources(rt) for rt in route_list]
        width = max([len(x) for x in res] + [1])
        self.route_res = np.full((max(len(res), 1), width), -1, np.int64)
        self.route_len = np.zeros(max(len(res), 1), np.int64)
        self.route_lat = np.zeros(max(len(res), 1))
        for i, (rt, rr) in enumerate(zip(route_list, res)):
            self.route_res[i, :len(rr)] = rr
            self.route_len[i] = len(rr)
            self.route_lat[i] = topology.latency(rt)
        self.op_route = np.array(op_route, dtype=np.int64)
        self.op_bytes = np.array(schedule.op_bytes, dtype=np.float64)
        self.op_dep = np.array(schedule.op_dep, dtype=np.int64).reshape(-1, 1)
        self.op_recv = np.array(schedule.op_recv, dtype=np.int64)
        self.op_agent = np.array(schedule.op_agent, dtype=np.int64)
        counts = np.bincount(self.op_agent, minlength=p) if len(self.op_agent) else np.zeros(p, np.int64)
        self.agent_nops = counts.astype(np.int64)
        self.agent_ops = np.full((p, max(int(counts.max(initial=0)), 1)), -1, np.int64)
        fill = np.zeros(p, np.int64)
        for o, a in enumerate(self.op_agent):
            self.agent_ops[a, fill[a]] = o
            fill[a] += 1
        self.cap = resource_capacities(topology)
        self.bytes_sent = np.bincount(self.op_agent, weights=self.op_bytes, minlength=p) if len(self.op_agent) else np.zeros(p)

    def execute(self, entry, background: list[BackgroundFlow] = (), t0: float = 0.0,
                backlog_rate: float = 0.0, backlog_cap: float = 0.0) -> CollectiveOutcome:
        entry = np.ascontiguousarray(entry, dtype=np.float64)
        p = self.schedule.p
        if entry.shape != (p,):
            raise CollectiveError(f"expected {p} entry times, got {entry.shape}")
        if p == 1 or not len(self.op_bytes):
            nres = self.cap.shape[0]
            return CollectiveOutcome(self.schedule.participants, entry, entry.copy(), np.zeros(p),
                                     np.empty(0), np.empty(0), self.op_agent, np.zeros(nres),
                                     np.zeros(nres), self.bytes_sent)
        out = _execute(entry, self.op_bytes, self.op_route, self.op_dep, self.op_recv,
                       self.agent_ops, self.agent_nops, self.route_res, self.route_len,
                       self.route_lat, self.cap, self.topology, list(background), t0,
                       backlog_rate, backlog_cap)
        return CollectiveOutcome(self.schedule.participants, entry, out["exit"], out["wait"],
                                 out["op_start"], out["op_deliver"], self.op_agent,
                                 out["res_busy"], out["res_contended"], self.bytes_sent)


def execute_collective(schedule: ChunkSchedule, entry_times, topology: Topology,
                       background: list[BackgroundFlow] = (), t0: float = 0.0,
                       backlog_rate: float = 0.0, backlog_cap: float = 0.0) -> CollectiveOutcome:
    """Run ``schedule`` on ``topology`` given each participant's entry time.

    ``entry_times`` is indexed like ``schedule.participants`` (or a mapping
    rank -> time). No rank starts sending before its own entry.
    """
    if isinstance(entry_times, dict):
        missing = set(schedule.participants) - set(entry_times)
        if missing:
            raise CollectiveError(f"no entry time for ranks {sorted(missing)}")
        entry_times = [entry_times[r] for r in schedule.participants]
    return CompiledCollective(schedule, topology).execute(entry_times, background, t0,
                                                          backlog_rate, backlog_cap)
