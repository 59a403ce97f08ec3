"""Per-rank compute durations: jitter, stragglers and locality penalties.

Every sample comes from its own counter-based stream keyed by
(seed, rank, iteration), so draws never depend on simulation event order or
on whether pacing is enabled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Jitter(str, enum.Enum):
    NONE = "None"
    LOGNORMAL = "LogNormal"
    GAMMA = "Gamma"


@dataclass(frozen=True)
class WorkloadModel:
    base_compute: float
    jitter: Jitter = Jitter.NONE
    jitter_sigma: float = 0.0
    gamma_shape: float = 100.0
    straggler_prob: float = 0.0
    straggler_slowdown: float = 1.0
    locality_penalty: float = 1.0
    per_rank_batch: int = 32
    sticky_stragglers: bool = False

    def __post_init__(self):
        if not self.base_compute > 0:
            raise ValueError("base_compute must be > 0")
        if not 0.0 <= self.straggler_prob <= 1.0:
            raise ValueError("straggler_prob must lie in [0, 1]")
        if self.straggler_slowdown < 1.0 or self.locality_penalty < 1.0:
            raise ValueError("slowdown and locality factors must be >= 1")
        if self.jitter_sigma < 0 or self.gamma_shape <= 0:
            raise ValueError("invalid jitter parameters")
        if self.per_rank_batch < 1:
            raise ValueError("per_rank_batch must be >= 1")


STICKY = 0xFFFFFFFF  # iteration slot reserved for per-rank sticky draws


def _stream(seed: int, rank: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, rank, iteration])


def sample_compute_time(model: WorkloadModel, rank: int, iteration: int, seed: int,
                        far: bool = False) -> float:
    """Compute-phase duration of ``rank`` in ``iteration``.

    ``base * jitter * (slowdown if straggling) * (locality_penalty if far)``.
    LogNormal jitter has log-mean 0, so its mean is ``exp(sigma**2 / 2)``;
    Gamma jitter has mean 1.
    """
    rng = _stream(seed, rank, iteration)
    z = rng.standard_normal()
    u = rng.random()
    if model.jitter is Jitter.LOGNORMAL:
        j = float(np.exp(model.jitter_sigma * z))
    elif model.jitter is Jitter.GAMMA:
        j = float(rng.gamma(model.gamma_shape, 1.0 / model.gamma_shape))
    else:
        j = 1.0
    if model.sticky_stragglers:
        straggle = _stream(seed, rank, STICKY).random() < model.straggler_prob
    else:
        straggle = u < model.straggler_prob
    d = model.base_compute * j
    if straggle:
        d *= model.straggler_slowdown
    if far:
        d *= model.locality_penalty
    return d


def is_straggler(model: WorkloadModel, rank: int, iteration: int, seed: int) -> bool:
    """Whether ``sample_compute_time`` applied the straggler slowdown."""
    if model.sticky_stragglers:
        return bool(_stream(seed, rank, STICKY).random() < model.straggler_prob)
    rng = _stream(seed, rank, iteration)
    rng.standard_normal()
    return bool(rng.random() < model.straggler_prob)


def global_batch(model: WorkloadModel, rank_count: int) -> int:
    if rank_count < 1:
        raise ValueError("rank_count must be >= 1")
    return model.per_rank_batch * rank_count
