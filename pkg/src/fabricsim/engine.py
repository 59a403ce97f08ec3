"""Bulk-synchronous training loop on the discrete-event fabric model.

Every iteration all ranks start together at the previous barrier release,
compute for a sampled duration, optionally hold back (pacing), enter the
all-reduce, and the next iteration starts when the last rank leaves it.
"""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .collectives import CompiledCollective, plan_hierarchical, plan_ring
from .config import ScenarioConfig, load_scenario
from .coordination import Coordinator, PacingConfig
from .topology import Locality, Topology
from .traffic import background_flows
from .workload import sample_compute_time


class EventKind(enum.IntEnum):
    # value doubles as the tie-break order at equal times
    COMPUTE_DONE = 0
    TRANSFER_DONE = 1
    BACKGROUND_EDGE = 2
    PACING_RELEASE = 3


@dataclass(order=True, frozen=True)
class Event:
    time: float
    kind: EventKind
    id: int


class EventQueue:
    def __init__(self):
        self._heap: list[Event] = []
        self.now = 0.0

    def push(self, time: float, kind: EventKind, ident: int):
        if time < self.now:
            raise RuntimeError(f"event at {time} scheduled in the past ({self.now})")
        heapq.heappush(self._heap, Event(time, kind, ident))

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def __bool__(self):
        return bool(self._heap)


@dataclass
class IterationRecord:
    """One iteration; all per-rank times are seconds since ``start``."""

    index: int
    start: float
    compute_end: np.ndarray
    pacing_delay: np.ndarray
    collective_entry: np.ndarray
    collective_exit: np.ndarray
    collective_wait: np.ndarray
    transfer_time: np.ndarray
    barrier_wait: np.ndarray
    max_delay: np.ndarray
    iteration_time: float
    op_start: np.ndarray | None = field(default=None, repr=False)
    op_deliver: np.ndarray | None = field(default=None, repr=False)

    @property
    def compute_start(self) -> np.ndarray:
        return np.zeros_like(self.compute_end)

    _ARRAYS = ("compute_end", "pacing_delay", "collective_entry", "collective_exit",
               "collective_wait", "transfer_time", "barrier_wait", "max_delay")

    def to_dict(self) -> dict:
        d = {"index": self.index, "start": self.start, "iteration_time": self.iteration_time}
        for k in self._ARRAYS:
            d[k] = getattr(self, k).tolist()
        if self.op_start is not None:
            d["op_start"] = self.op_start.tolist()
            d["op_deliver"] = self.op_deliver.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        kw = {k: np.asarray(d[k], dtype=np.float64) for k in cls._ARRAYS}
        for k in ("op_start", "op_deliver"):
            if k in d:
                kw[k] = np.asarray(d[k], dtype=np.float64)
        return cls(index=d["index"], start=d["start"], iteration_time=d["iteration_time"], **kw)


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    records: list[IterationRecord]
    warmup_count: int
    measured_count: int
    participants: tuple[int, ...]
    op_agent: np.ndarray
    resource_names: list[str]
    link_busy: np.ndarray
    link_contended: np.ndarray
    events: int = 0
    metrics: dict | None = None

    @property
    def iteration_times(self) -> np.ndarray:
        return np.array([r.iteration_time for r in self.records], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "config": self.config.model_dump(mode="json"),
            "seed": self.seed,
            "warmup_count": self.warmup_count,
            "measured_count": self.measured_count,
            "participants": list(self.participants),
            "resource_names": self.resource_names,
            "link_busy": self.link_busy.tolist(),
            "link_contended": self.link_contended.tolist(),
            "records": [r.to_dict() for r in self.records],
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        cfg = load_scenario(d["config"])
        sim = Simulation(cfg, d["seed"])
        return cls(cfg, d["seed"], [IterationRecord.from_dict(r) for r in d["records"]],
                   d["warmup_count"], d["measured_count"], tuple(d["participants"]),
                   sim.compiled.op_agent, list(d["resource_names"]),
                   np.asarray(d["link_busy"], dtype=np.float64),
                   np.asarray(d["link_contended"], dtype=np.float64), 0, d.get("metrics"))


def pacing_config(cfg: ScenarioConfig) -> PacingConfig:
    return PacingConfig(**cfg.coordination.model_dump())


class Simulation:
    """Mutable state of one run; strictly single-threaded."""

    def __init__(self, config: ScenarioConfig, seed: int | None = None, coordination: bool = True):
        self.config = config
        self.seed = config.seed if seed is None else int(seed)
        self.topology: Topology = config.topology.build()
        self.model = config.workload.model()
        n = self.topology.rank_count
        coll = config.collective
        if coll.algorithm == "HierarchicalRing":
            participants = list(range(n))
            self.schedule = plan_hierarchical(self.topology, participants, coll.message_bytes)
        else:
            participants = coll.ring_order if coll.ring_order is not None else list(range(n))
            self.schedule = plan_ring(participants, coll.message_bytes)
        self.compiled = CompiledCollective(self.schedule, self.topology)
        self.participants = self.schedule.participants
        # participant position of each rank
        self.slot = np.empty(n, dtype=np.int64)
        self.slot[list(self.participants)] = np.arange(n)
        self.far = [self.topology.locality(r) is Locality.FAR for r in range(n)]
        self.background = background_flows(self.topology, config.background.pattern(), self.seed)
        self.backlog_rate = coll.stall_backlog_gbps * 1e9 / 8.0
        cap = coll.stall_backlog_cap_mb * 1e6
        self.backlog_cap = cap if cap > 0 else np.inf
        self.pacing = pacing_config(config)
        self.coordinator = Coordinator(self.pacing, n) if (self.pacing.enabled and coordination) else None
        self.clock = 0.0
        self.iteration = 0
        self.events = 0
        nres = self.compiled.cap.shape[0]
        self.link_busy = np.zeros(nres)
        self.link_contended = np.zeros(nres)

    def resource_names(self) -> list[str]:
        return [f"{l.id}:{d}" for l in self.topology.links for d in ("up", "down")]

    def run_iteration(self, keep_trace: bool = False, measured: bool = True) -> IterationRecord:
        n = self.topology.rank_count
        i = self.iteration
        compute = np.array([sample_compute_time(self.model, r, i, self.seed, self.far[r])
                            for r in range(n)], dtype=np.float64)
        delay = np.zeros(n)
        d_max = np.zeros(n)
        entry = np.empty(n)
        q = EventQueue()
        for r in range(n):
            q.push(compute[r], EventKind.COMPUTE_DONE, r)
        while q:
            ev = q.pop()
            self.events += 1
            r = ev.id
            if ev.kind is EventKind.COMPUTE_DONE:
                if self.coordinator is not None:
                    delay[r] = self.coordinator.delay(r, ev.time)
                    d_max[r] = self.coordinator.d_max(r)
                q.push(ev.time + delay[r], EventKind.PACING_RELEASE, r)
            else:
                entry[r] = ev.time
        slot_entry = entry[list(self.participants)]
        out = self.compiled.execute(slot_entry, self.background, self.clock,
                                    self.backlog_rate, self.backlog_cap)
        exit_t = out.exit[self.slot]
        iteration_time = float(exit_t.max())
        if len(out.op_start):
            busy = np.bincount(out.op_agent, weights=out.op_deliver - out.op_start, minlength=n)[self.slot]
        else:
            busy = np.zeros(n)
        wait = (exit_t - entry) - busy
        barrier = wait + (iteration_time - exit_t)
        rec = IterationRecord(i, self.clock, compute, delay, entry, exit_t, wait, busy, barrier,
                              d_max, iteration_time,
                              out.op_start if keep_trace else None,
                              out.op_deliver if keep_trace else None)
        if measured:
            self.link_busy += out.res_busy
            self.link_contended += out.res_contended
        if self.coordinator is not None:
            self.coordinator.end_iteration(i, compute, entry, exit_t, out.wait[self.slot], iteration_time)
        self.clock = self.clock + iteration_time
        self.iteration += 1
        return rec


def run_simulation(scenario: ScenarioConfig, seed: int | None = None, keep_traces: bool = True,
                   coordination: bool = True) -> RunResult:
    """Run warmup plus measured iterations; deterministic in (scenario, seed)."""
    sim = Simulation(scenario, seed, coordination)
    for _ in range(scenario.warmup):
        sim.run_iteration(measured=False)
    records = [sim.run_iteration(keep_trace=keep_traces) for _ in range(scenario.iterations)]
    return RunResult(scenario, sim.seed, records, scenario.warmup, len(records),
                     sim.participants, sim.compiled.op_agent, sim.resource_names(),
                     sim.link_busy, sim.link_contended, sim.events)
