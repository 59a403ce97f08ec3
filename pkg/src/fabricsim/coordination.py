"""Per-rank pacing agents.

Each rank keeps a rolling window of what it has observed at its own
collective boundaries: time spent stalled on peers, its own compute times
and iteration lengths. When the observed skew stays above a fraction of the
median iteration time over a whole window the agent engages and holds early
arrivals back by a bounded delay; after ``cooldown`` calm iterations it
disengages. Agents only ever shift collective entry times; schedules are
never touched.

Where to hold a rank back to is the predicted arrival of the critical
(latest) peer. The local estimator never sees peers' timestamps. It treats
its own recent compute times as a sample of what every rank draws and
predicts the ``q``-quantile of the maximum over all ranks. Waits are not
used for that prediction: once the agent holds its rank back, the waits it
observes are shaped by its own hold, and learning from them feeds back into
the target.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np


@dataclass(frozen=True)
class PacingConfig:
    enabled: bool = False
    window_size: int = 16
    skew_threshold: float = 0.05
    max_delay_fraction: float = 0.25
    target_quantile: float = 0.5
    cooldown: int = 10
    estimator: str = "local"

    def __post_init__(self):
        if self.window_size < 1 or self.cooldown < 1:
            raise ValueError("window_size and cooldown must be >= 1")
        if not self.skew_threshold > 0 or self.max_delay_fraction < 0:
            raise ValueError("skew_threshold must be > 0 and max_delay_fraction >= 0")
        if not 0.0 <= self.target_quantile <= 1.0:
            raise ValueError("target_quantile must lie in [0, 1]")
        if self.estimator not in ("local", "omniscient"):
            raise ValueError("estimator must be 'local' or 'omniscient'")


@dataclass
class PacingState:
    """Rolling observations of one rank."""

    window_size: int
    ranks: int = 1
    waits: deque = None
    compute_ends: deque = None
    arrivals: deque = None  # critical arrival seen by this rank, seconds after iteration start
    iteration_times: deque = None
    skews: deque = None
    engaged: bool = False
    calm: int = 0
    last_skew: float = 0.0
    transitions: list = field(default_factory=list)

    def __post_init__(self):
        w = self.window_size
        self.waits = deque(maxlen=w)
        self.compute_ends = deque(maxlen=w)
        self.arrivals = deque(maxlen=w)
        self.iteration_times = deque(maxlen=w)
        self.skews = deque(maxlen=w)

    def window_mean(self) -> float:
        return float(np.mean(self.waits)) if self.waits else 0.0

    def median_iteration_time(self) -> float:
        return float(np.median(self.iteration_times)) if self.iteration_times else 0.0


def observe(state: PacingState, rank: int, iteration: int, compute_end: float,
            collective_entry: float, collective_exit: float, wait_time: float,
            iteration_time: float | None = None, critical_arrival: float | None = None) -> PacingState:
    """Record one iteration as seen by ``rank``.

    Times are seconds since the iteration start. Unless given, the critical
    arrival is taken as own entry plus time stalled on peers.
    """
    if collective_exit < collective_entry:
        raise ValueError("collective exit precedes entry")
    wait_time = max(0.0, wait_time)
    if critical_arrival is None:
        critical_arrival = collective_entry + wait_time
    state.waits.append(wait_time)
    state.compute_ends.append(compute_end)
    state.arrivals.append(critical_arrival)
    if iteration_time is not None:
        state.iteration_times.append(iteration_time)
    return state


def estimate_skew(arrivals) -> float:
    """Spread between the earliest and latest collective arrivals."""
    a = np.asarray(arrivals, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no arrivals")
    return float(a.max() - a.min())


def max_delay(state: PacingState, config: PacingConfig, median_iteration_time: float | None = None) -> float:
    med = state.median_iteration_time() if median_iteration_time is None else median_iteration_time
    return config.max_delay_fraction * med


def predicted_critical_arrival(state: PacingState, config: PacingConfig) -> float:
    """Where an engaged agent holds its rank back to.

    Omniscient mode takes the ``q``-quantile of the critical arrivals it
    was fed. Local mode fits a normal model to the rank's own compute ends
    and returns the ``q``-quantile of the maximum of ``ranks`` such draws,
    i.e. the ``q ** (1 / ranks)`` quantile of one draw.
    """
    q = config.target_quantile
    if config.estimator == "omniscient":
        return float(np.quantile(np.asarray(state.arrivals), q))
    x = np.asarray(state.compute_ends, dtype=np.float64)
    if x.size < 2:
        return float(x.max())
    level = min(max(q ** (1.0 / state.ranks), 1e-9), 1.0 - 1e-9)
    z = NormalDist().inv_cdf(level)
    return float(x.mean() + z * x.std(ddof=1))


def decide_pacing(state: PacingState, config: PacingConfig, rank: int,
                  predicted_own_arrival: float, median_iteration_time: float | None = None) -> float:
    """Bounded delay to apply before entering the collective.

    ``min(d_max, max(0, target - predicted_own_arrival))`` when engaged,
    zero otherwise; see ``predicted_critical_arrival`` for the target.
    """
    if not config.enabled or not state.engaged or not state.compute_ends:
        return 0.0
    d_max = max_delay(state, config, median_iteration_time)
    target = predicted_critical_arrival(state, config)
    return min(d_max, max(0.0, target - predicted_own_arrival))


def adapt(state: PacingState, config: PacingConfig, skew: float,
          median_iteration_time: float | None = None, iteration: int | None = None) -> bool:
    """Update engagement after an iteration's barrier; returns the new flag.

    Engages once the mean skew over a full window exceeds ``tau * median``;
    disengages after ``cooldown`` consecutive iterations at or below it.
    """
    med = state.median_iteration_time() if median_iteration_time is None else median_iteration_time
    limit = config.skew_threshold * med
    state.skews.append(skew)
    state.last_skew = skew
    if not state.engaged:
        if len(state.skews) == config.window_size and float(np.mean(state.skews)) > limit:
            state.engaged = True
            state.calm = 0
            state.transitions.append((iteration, True))
    else:
        if skew <= limit:
            state.calm += 1
            if state.calm >= config.cooldown:
                state.engaged = False
                state.calm = 0
                state.transitions.append((iteration, False))
        else:
            state.calm = 0
    return state.engaged


class Coordinator:
    """One pacing agent per rank, driven by the engine."""

    def __init__(self, config: PacingConfig, rank_count: int):
        self.config = config
        self.states = [PacingState(config.window_size, rank_count) for _ in range(rank_count)]

    def delay(self, rank: int, compute_end: float) -> float:
        return decide_pacing(self.states[rank], self.config, rank, compute_end)

    def d_max(self, rank: int) -> float:
        return max_delay(self.states[rank], self.config)

    def end_iteration(self, iteration: int, compute_end, entry, exit, wait, iteration_time: float):
        """Feed every agent its own view of the finished iteration.

        Skew is measured against compute ends rather than entries so that a
        hold does not hide the imbalance it compensates for. Locally it is
        how long before the critical arrival the rank finished computing;
        the omniscient mode uses the global spread of compute ends.
        """
        omniscient = self.config.estimator == "omniscient"
        latest = float(np.max(compute_end))
        global_skew = estimate_skew(compute_end)
        for r, st in enumerate(self.states):
            observe(st, r, iteration, float(compute_end[r]), float(entry[r]), float(exit[r]),
                    float(wait[r]), iteration_time, latest if omniscient else None)
            skew = global_skew if omniscient else max(0.0, st.arrivals[-1] - float(compute_end[r]))
            adapt(st, self.config, skew, iteration=iteration)
