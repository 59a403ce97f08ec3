"""Run statistics, failure-mode scores and per-iteration timelines."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import RunResult, Simulation
from .topology import Locality
from .workload import global_batch

MODES = ("SynchronizationAmplification", "FabricContention", "LocalityVariance", "RuntimeVariance")
PHASES = ("compute", "pacing", "wait", "transfer", "barrier")

# MAD -> sigma for normal data
MAD_SCALE = 1.4826


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    iterations: int
    mean_iteration_s: float
    median_iteration_s: float
    std_iteration_s: float
    cv: float
    p50_s: float
    p95_s: float
    p99_s: float
    global_batch: int
    throughput_sps: float
    phase_means: dict
    nodes: int
    reference_throughput: float | None = None
    reference_nodes: int | None = None
    speedup: float | None = None
    efficiency: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def cv_population(x) -> float:
    """Population standard deviation over mean."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise MetricsError("no samples")
    m = x.mean()
    return float(np.sqrt(np.mean((x - m) ** 2)) / m) if m != 0 else 0.0


def compute_metrics(run: RunResult, reference_throughput: float | None = None,
                    reference_nodes: int = 1) -> MetricsReport:
    if not run.records:
        raise MetricsError("run has no measured iterations")
    it = run.iteration_times
    mean = float(it.mean())
    std = float(np.sqrt(np.mean((it - mean) ** 2)))
    p50, p95, p99 = (float(v) for v in np.percentile(it, [50, 95, 99]))
    batch = global_batch(run.config.workload.model(), run.config.rank_count)
    recs = run.records
    phases = {
        "compute": float(np.mean([r.compute_end.mean() for r in recs])),
        "pacing": float(np.mean([r.pacing_delay.mean() for r in recs])),
        "collective": float(np.mean([(r.collective_exit - r.collective_entry).mean() for r in recs])),
        "transfer": float(np.mean([r.transfer_time.mean() for r in recs])),
        "barrier_wait": float(np.mean([r.barrier_wait.mean() for r in recs])),
    }
    nodes = run.config.topology.nodes
    rep = MetricsReport(len(it), mean, float(np.median(it)), std, std / mean if mean else 0.0,
                        p50, p95, p99, batch, batch / mean, phases, nodes)
    if reference_throughput is not None:
        rep.reference_throughput = float(reference_throughput)
        rep.reference_nodes = reference_nodes
        rep.speedup = rep.throughput_sps / reference_throughput
        rep.efficiency = rep.speedup / (nodes / reference_nodes)
    return rep


@dataclass
class FailureModeReport:
    scores: dict
    flags: dict
    cutoffs: dict
    evidence: dict = field(default_factory=dict)

    def flagged(self) -> list[str]:
        return [m for m in MODES if self.flags[m]]

    def to_dict(self) -> dict:
        return asdict(self)


def _robust_sigma(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return MAD_SCALE * float(np.median(np.abs(x - np.median(x))))


def _sync_amplification(compute: np.ndarray, it: np.ndarray):
    """Mean share of the iteration lost to rare outlier compute phases.

    Per-rank means are removed first so that static offsets (locality) do
    not count; what is left beyond ``median + 3 sigma`` (robust) is lateness
    the barrier forces on everybody else.
    """
    if compute.shape[1] < 2:
        return 0.0, []
    resid = compute - compute.mean(axis=0, keepdims=True)
    sig = _robust_sigma(resid)
    limit = float(np.median(resid)) + 3.0 * sig
    excess = np.maximum(resid.max(axis=1) - limit, 0.0)
    share = excess / it
    worst = np.argsort(share)[::-1][:5]
    ev = [{"iteration": int(i), "rank": int(resid[i].argmax()), "share": float(share[i])}
          for i in worst if share[i] > 0]
    return float(np.clip(share.mean(), 0.0, 1.0)), ev


def _fabric_contention(run: RunResult, recs):
    total = float(sum(r.iteration_time - r.collective_entry.min() for r in recs))
    if total <= 0 or run.link_contended.size == 0:
        return 0.0, []
    frac = run.link_contended / total
    order = np.argsort(frac)[::-1][:5]
    ev = [{"resource": run.resource_names[k], "contended_fraction": float(frac[k])}
          for k in order if frac[k] > 0]
    return float(np.clip(frac.max(), 0.0, 1.0)), ev


def _locality_variance(run: RunResult, recs, topology):
    """Near/Far separation of per-rank compute plus GPU-port utilization gap."""
    n = topology.rank_count
    far = np.array([topology.locality(r) is Locality.FAR for r in range(n)])
    if far.all() or not far.any():
        return 0.0, {}
    cost = np.array([r.compute_end for r in recs])  # iterations x ranks
    per_rank = cost.mean(axis=0)
    a, b = per_rank[far], per_rank[~far]
    gap = abs(float(a.mean() - b.mean()))
    within = float(np.sqrt((a.var() * a.size + b.var() * b.size) / n))
    # standard error of the gap from iteration-to-iteration noise
    it_sd = cost.std(axis=0)
    se = float(np.sqrt(np.mean(it_sd[far] ** 2) / (far.sum() * len(recs))
                       + np.mean(it_sd[~far] ** 2) / ((~far).sum() * len(recs))))
    rank_score = max(0.0, gap - 3.0 * se) / (gap + within) if gap > 0 else 0.0
    port_score = 0.0
    if topology.ports:
        util = _port_utilization(run, topology)
        uf, un = float(util[far].mean()), float(util[~far].mean())
        hi = max(uf, un)
        port_score = abs(uf - un) / hi if hi > 0 else 0.0
    ev = {"far_ranks": np.flatnonzero(far).tolist(), "gap_s": gap, "within_s": within,
          "rank_score": rank_score, "port_score": port_score}
    return float(np.clip(max(rank_score, port_score), 0.0, 1.0)), ev


def _port_utilization(run: RunResult, topology) -> np.ndarray:
    """Achieved over nominal rate on each GPU port while collective flows use it.

    A port that limits its flows runs near 1; a port whose flows are held
    back elsewhere runs below it.
    """
    comp = Simulation(run.config, run.seed, coordination=False).compiled
    nres = comp.cap.shape[0]
    res_bytes = np.zeros(nres)
    for o, r in enumerate(comp.op_route):
        res_bytes[comp.route_res[r, :comp.route_len[r]]] += comp.op_bytes[o]
    res_bytes *= len(run.records)
    idx = topology.link_index
    util = np.zeros(len(topology.ports))
    for g, port in enumerate(topology.ports):
        k = np.array([2 * idx[port], 2 * idx[port] + 1])
        cap_time = float((run.link_busy[k] * comp.cap[k]).sum())
        util[g] = res_bytes[k].sum() / cap_time if cap_time > 0 else 0.0
    return util


def _runtime_variance(compute: np.ndarray, scale: float):
    """Robust spread of compute times once per-rank offsets are divided out."""
    norm = compute / np.median(compute, axis=0, keepdims=True)
    rcv = _robust_sigma(norm) / float(np.median(norm))
    return float(1.0 - np.exp(-rcv / scale)), {"robust_cv": rcv}


def classify(run: RunResult, topology=None) -> FailureModeReport:
    """Score a run against the four failure modes; flags use the configured cutoffs."""
    if not run.records:
        raise MetricsError("run has no measured iterations")
    topology = topology or run.config.topology.build()
    diag = run.config.diagnostics
    recs = run.records
    compute = np.array([r.compute_end for r in recs])
    it = run.iteration_times
    sync, sync_ev = _sync_amplification(compute, it)
    fab, fab_ev = _fabric_contention(run, recs)
    loc, loc_ev = _locality_variance(run, recs, topology)
    rt, rt_ev = _runtime_variance(compute, diag.runtime_scale)
    scores = dict(zip(MODES, (sync, fab, loc, rt)))
    cutoffs = dict(zip(MODES, (diag.sync_cutoff, diag.fabric_cutoff, diag.locality_cutoff,
                               diag.runtime_cutoff)))
    flags = {m: bool(scores[m] > cutoffs[m]) for m in MODES}
    evidence = {"SynchronizationAmplification": sync_ev, "FabricContention": fab_ev,
                "LocalityVariance": loc_ev, "RuntimeVariance": rt_ev}
    return FailureModeReport(scores, flags, cutoffs, evidence)


@dataclass(frozen=True)
class Span:
    rank: int
    phase: str
    start: float
    end: float


def export_timeline(run: RunResult, index: int) -> list[Span]:
    """Per-rank phase spans of one measured iteration, relative to its start.

    Each rank's spans run back to back from 0 to the iteration time:
    compute, pacing (if any), then the collective as alternating wait and
    transfer segments, then barrier wait until the last rank leaves.
    """
    if not 0 <= index < len(run.records):
        raise IndexError(f"iteration {index} out of range (0..{len(run.records) - 1})")
    rec = run.records[index]
    if rec.op_start is None and len(run.op_agent):
        raise MetricsError("run was recorded without transfer traces")
    n = rec.compute_end.shape[0]
    slot_of = {r: s for s, r in enumerate(run.participants)}
    spans: list[Span] = []
    for r in range(n):
        cur = 0.0
        out = []

        def add(phase, end):
            nonlocal cur
            out.append(Span(r, phase, cur, float(end)))
            cur = float(end)

        add("compute", rec.compute_end[r])
        if rec.collective_entry[r] > cur:
            add("pacing", rec.collective_entry[r])
        ops = np.flatnonzero(run.op_agent == slot_of[r]) if len(run.op_agent) else []
        if len(ops) == 0:
            add("transfer", cur)
        for o in ops:
            if rec.op_start[o] > cur:
                add("wait", rec.op_start[o])
            add("transfer", rec.op_deliver[o])
        if rec.collective_exit[r] > cur:
            add("wait", rec.collective_exit[r])
        if rec.iteration_time > cur:
            add("barrier", rec.iteration_time)
        spans.extend(out)
    return spans


def timeline_csv(spans: list[Span]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "phase", "start_s", "end_s"])
    for s in spans:
        w.writerow([s.rank, s.phase, repr(s.start), repr(s.end)])
    return buf.getvalue()
