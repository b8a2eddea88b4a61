"""Sampling-latency measurement."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, asdict

import numpy as np

from . import _accel
from .ddpm import Sampler, SamplerMode
from .schedule import linear_schedule


@dataclass
class LatencyReport:
    trials: int
    p50: float
    p99: float
    max: float
    deadline_ms: float
    passed: bool
    T: int = 0
    backend: str = ""
    dtype: str = "float64"

    @classmethod
    def from_samples(cls, latencies_s, deadline_ms, **info):
        ms = np.asarray(latencies_s) * 1e3
        p50, p99 = np.percentile(ms, [50, 99])
        return cls(len(ms), float(p50), float(p99), float(ms.max()), float(deadline_ms),
                   bool(p99 < deadline_ms), **info)

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@contextlib.contextmanager
def single_thread():
    """Limit BLAS/OpenMP pools to one thread when threadpoolctl is available."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def measure_latency(sampler: Sampler, obs, trials=1000, warmup=50, seed=0, deadline_ms=20.0):
    rng = np.random.default_rng(seed)
    with single_thread():
        for _ in range(warmup):
            sampler.sample(obs, rng)
        lat = [sampler.sample(obs, rng)[1] for _ in range(trials)]
    return LatencyReport.from_samples(
        lat, deadline_ms, T=sampler.schedule.T,
        backend=sampler.backend or _accel.backend_name(), dtype=sampler.dtype.name)


def latency_vs_steps(policy, norm, obs, steps=(1, 60), trials=1000, warmup=50, seed=0,
                     mode=SamplerMode.ANCESTRAL, backend=None, dtype=np.float64,
                     beta_start=None, beta_end=None, deadline_ms=20.0):
    """Latency reports for the same networks at several diffusion lengths."""
    out = {}
    for T in steps:
        kw = {}
        if beta_start is not None:
            kw["beta_start"] = beta_start
        if beta_end is not None:
            kw["beta_end"] = beta_end
        sm = Sampler(policy, linear_schedule(T, **kw), norm, mode=mode, backend=backend, dtype=dtype)
        out[T] = measure_latency(sm, obs, trials, warmup, seed, deadline_ms)
    return out
