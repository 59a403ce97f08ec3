import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fabricsim.workload import Jitter, WorkloadModel, global_batch, is_straggler, sample_compute_time


def test_deterministic_case_is_base():
    m = WorkloadModel(0.1)
    assert sample_compute_time(m, 3, 7, 42) == 0.1


def test_forced_straggler():
    m = WorkloadModel(0.1, straggler_prob=1.0, straggler_slowdown=3.0)
    assert sample_compute_time(m, 0, 0, 1) == pytest.approx(0.3, rel=1e-15)


def test_far_penalty_applies():
    m = WorkloadModel(0.1, locality_penalty=1.5)
    assert sample_compute_time(m, 0, 0, 1, far=True) == pytest.approx(0.15, rel=1e-15)


def test_lognormal_mean():
    sigma = 0.05
    m = WorkloadModel(1.0, Jitter.LOGNORMAL, jitter_sigma=sigma)
    x = np.array([sample_compute_time(m, i % 100, i // 100, 9) for i in range(100_000)])
    assert x.mean() == pytest.approx(math.exp(sigma**2 / 2), rel=0.01)


def test_gamma_mean_is_base():
    m = WorkloadModel(2.0, Jitter.GAMMA, gamma_shape=50.0)
    x = np.array([sample_compute_time(m, i % 100, i // 100, 9) for i in range(20_000)])
    assert x.mean() == pytest.approx(2.0, rel=0.01)


def test_straggler_frequency_binomial():
    q, n = 0.07, 100_000
    m = WorkloadModel(1.0, straggler_prob=q, straggler_slowdown=2.0)
    hits = sum(is_straggler(m, i % 500, i // 500, 4) for i in range(n))
    assert abs(hits - n * q) <= 3 * math.sqrt(n * q * (1 - q))
    x = [sample_compute_time(m, i % 500, i // 500, 4) for i in range(2000)]
    flags = [is_straggler(m, i % 500, i // 500, 4) for i in range(2000)]
    assert all((v == 2.0) == f for v, f in zip(x, flags))


def test_global_batch():
    assert global_batch(WorkloadModel(1.0), 1) == 32
    assert global_batch(WorkloadModel(1.0), 4) == 128
    assert global_batch(WorkloadModel(1.0), 64) == 2048
    with pytest.raises(ValueError):
        global_batch(WorkloadModel(1.0), 0)


@pytest.mark.parametrize("kw", [dict(base_compute=0), dict(base_compute=1, straggler_prob=1.5),
                                dict(base_compute=1, straggler_slowdown=0.5),
                                dict(base_compute=1, locality_penalty=0.9)])
def test_invalid_models(kw):
    with pytest.raises(ValueError):
        WorkloadModel(**kw)


@given(st.integers(0, 2**32), st.integers(0, 255), st.integers(0, 10_000),
       st.sampled_from(list(Jitter)), st.floats(0, 0.5), st.floats(0, 1))
def test_samples_positive_and_pure(seed, rank, it, jitter, sigma, q):
    m = WorkloadModel(0.05, jitter, jitter_sigma=sigma, straggler_prob=q, straggler_slowdown=2.0)
    a = sample_compute_time(m, rank, it, seed)
    # interleave unrelated draws: the stream is keyed, not stateful
    sample_compute_time(m, rank + 1, it, seed)
    assert a > 0
    assert sample_compute_time(m, rank, it, seed) == a


def test_sticky_stragglers_stay_put():
    m = WorkloadModel(1.0, straggler_prob=0.3, straggler_slowdown=2.0, sticky_stragglers=True)
    for r in range(20):
        vals = {sample_compute_time(m, r, i, 5) for i in range(10)}
        assert len(vals) == 1
