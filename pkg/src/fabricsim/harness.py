"""Node-count sweeps with repeats, baseline vs coordination, and result emission."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ScenarioConfig
from .engine import RunResult, run_simulation
from .metrics import compute_metrics

VARIANTS = ("baseline", "coordination")
COLUMNS = ("nodes", "variant", "repeat", "mean_iter_s", "throughput_sps", "cv", "p95_s", "p99_s",
           "efficiency")
AGGREGATE = "all"


class SweepError(RuntimeError):
    pass


def derive_seed(base_seed: int, nodes: int, repeat: int) -> int:
    """Seed of one sweep point; shared by both variants so they see the same draws."""
    ss = np.random.SeedSequence([int(base_seed), int(nodes), int(repeat)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    node_counts: tuple[int, ...]
    variants: tuple[str, ...] = VARIANTS
    repeats: int | None = None

    def __post_init__(self):
        nc = tuple(int(n) for n in self.node_counts)
        if not nc or any(n < 1 for n in nc) or any(a >= b for a, b in zip(nc, nc[1:])):
            raise ValueError("node_counts must be positive and strictly increasing")
        object.__setattr__(self, "node_counts", nc)
        bad = set(self.variants) - set(VARIANTS)
        if bad or not self.variants:
            raise ValueError(f"unknown variants {sorted(bad)}")
        if self.repeats is not None and self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @property
    def n_repeats(self) -> int:
        return self.repeats if self.repeats is not None else self.base.repeats

    def point_config(self, nodes: int, variant: str) -> ScenarioConfig:
        return self.base.with_overrides(**{"topology.nodes": nodes,
                                           "coordination.enabled": variant == "coordination"})


@dataclass
class SweepTable:
    """Aggregated rows (``repeat == "all"``) plus the per-repeat rows behind them."""

    rows: list[dict] = field(default_factory=list)
    runs: list[dict] = field(default_factory=list)
    reference_throughput: float | None = None

    def ideal_sps(self, nodes: int) -> float:
        return nodes * self.reference_throughput

    def row(self, nodes: int, variant: str) -> dict:
        for r in self.rows:
            if r["nodes"] == nodes and r["variant"] == variant:
                return r
        raise KeyError((nodes, variant))

    def to_dict(self) -> dict:
        return {"columns": list(COLUMNS), "reference_throughput_sps": self.reference_throughput,
                "runs": self.runs, "rows": self.rows}


def _point_run(cfg: ScenarioConfig, seed: int, keep_traces: bool, label: str) -> RunResult:
    try:
        return run_simulation(cfg, seed=seed, keep_traces=keep_traces)
    except Exception as err:
        raise SweepError(f"sweep point {label} failed: {err}") from err


def run_sweep(spec: SweepSpec, keep_traces: bool = False,
              on_run: Callable[[int, str, int, RunResult], None] | None = None) -> SweepTable:
    """Run every (nodes, variant, repeat) point and aggregate over repeats.

    The 1-node baseline of the same base scenario is the throughput
    reference for efficiency; it is run separately when 1 is not swept.
    ``on_run`` sees every finished run, e.g. for extra checks.
    """
    reps = spec.n_repeats
    base_seed = spec.base.seed
    results: dict[tuple[int, str], list] = {}
    for nodes in spec.node_counts:
        for variant in spec.variants:
            cfg = spec.point_config(nodes, variant)
            per = []
            for k in range(reps):
                seed = derive_seed(base_seed, nodes, k)
                run = _point_run(cfg, seed, keep_traces, f"nodes={nodes} variant={variant} repeat={k}")
                if on_run is not None:
                    on_run(nodes, variant, k, run)
                per.append(compute_metrics(run))
            results[(nodes, variant)] = per
    if (1, "baseline") in results:
        ref_runs = results[(1, "baseline")]
    else:
        cfg = spec.point_config(1, "baseline")
        ref_runs = [compute_metrics(_point_run(cfg, derive_seed(base_seed, 1, k), False,
                                               f"nodes=1 variant=baseline repeat={k} (reference)"))
                    for k in range(reps)]
    ref = float(np.mean([m.throughput_sps for m in ref_runs]))
    table = SweepTable(reference_throughput=ref)
    for (nodes, variant), per in results.items():
        for k, m in enumerate(per):
            table.runs.append(_row(nodes, variant, k, m.mean_iteration_s, m.throughput_sps, m.cv,
                                   m.p95_s, m.p99_s, m.throughput_sps / (ref * nodes)))
        thr = float(np.mean([m.throughput_sps for m in per]))
        table.rows.append(_row(nodes, variant, AGGREGATE,
                               float(np.mean([m.mean_iteration_s for m in per])), thr,
                               float(np.mean([m.cv for m in per])),
                               float(np.mean([m.p95_s for m in per])),
                               float(np.mean([m.p99_s for m in per])), thr / (ref * nodes)))
    return table


def _row(nodes, variant, repeat, mean_iter, thr, cv, p95, p99, eff) -> dict:
    return dict(zip(COLUMNS, (int(nodes), variant, repeat, float(mean_iter), float(thr), float(cv),
                              float(p95), float(p99), float(eff))))


def table_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in table.runs + table.rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in COLUMNS])
    return buf.getvalue()


def read_table_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({"nodes": int(r["nodes"]), "variant": r["variant"],
                     "repeat": r["repeat"] if r["repeat"] == AGGREGATE else int(r["repeat"]),
                     **{c: float(r[c]) for c in COLUMNS[3:]}})
    return rows


def emit(obj, fmt: str, path) -> Path:
    """Write a SweepTable, RunResult or plain mapping as csv or json.

    Output depends only on the data: keys are sorted and floats use their
    shortest round-trip representation.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    if fmt == "csv":
        if not isinstance(obj, SweepTable):
            raise ValueError("csv output is only defined for sweep tables")
        text = table_csv(obj)
    elif isinstance(obj, RunResult):
        text = obj.to_json() + "\n"
    else:
        data = obj.to_dict() if hasattr(obj, "to_dict") else obj
        text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as err:
        raise SweepError(f"cannot write {path}: {err}") from None
    return path
