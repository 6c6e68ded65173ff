"""Monotone eta sequence controlling how much degradation each timestep carries.

The schedule is geometric in sqrt(eta): with b0 chosen so that both endpoints
are attained exactly,

    b0       = exp( log(eta_end / eta_start) / (2 * (T - 1)) )
    beta_t   = ((t - 1) / (T - 1))**p * (T - 1)
    sqrt(eta_t) = sqrt(eta_start) * b0**beta_t        for t = 1..T

p = 1 gives a plain geometric progression of sqrt(eta); p != 1 warps the
exponent grid while keeping the endpoints fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 4
    eta_start: float = 0.01
    eta_end: float = 0.99
    curvature_p: float = 1.0

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")
        if not 0.0 < self.eta_start < 1.0:
            raise ValueError(f"eta_start must be in (0, 1), got {self.eta_start}")
        if not 0.0 < self.eta_end < 1.0:
            raise ValueError(f"eta_end must be in (0, 1), got {self.eta_end}")
        if self.eta_start >= self.eta_end:
            raise ValueError(
                f"eta_start must be < eta_end, got {self.eta_start} >= {self.eta_end}"
            )
        if self.curvature_p <= 0.0:
            raise ValueError(f"curvature_p must be > 0, got {self.curvature_p}")


@dataclass(frozen=True)
class EtaSchedule:
    """The degradation weights eta_1..eta_T and their differences.

    etas is strictly increasing inside (0, 1); alphas[t-2] = eta_t - eta_{t-1}
    for t = 2..T, so cumulative sums of alphas from eta_1 rebuild etas.
    """

    etas: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        etas = np.ascontiguousarray(self.etas, dtype=np.float64)
        alphas = np.ascontiguousarray(self.alphas, dtype=np.float64)
        if etas.ndim != 1 or etas.size < 2:
            raise ValueError("etas must be a 1-d array of length >= 2")
        if alphas.shape != (etas.size - 1,):
            raise ValueError("alphas must have length len(etas) - 1")
        if not np.all(np.diff(etas) > 0.0):
            raise ValueError("etas must be strictly increasing")
        if etas[0] <= 0.0 or etas[-1] >= 1.0:
            raise ValueError("etas must lie inside (0, 1)")
        if not np.allclose(alphas, np.diff(etas), rtol=1e-12, atol=0.0):
            raise ValueError("alphas must equal successive eta differences")
        etas.flags.writeable = False
        alphas.flags.writeable = False
        object.__setattr__(self, "etas", etas)
        object.__setattr__(self, "alphas", alphas)

    @property
    def steps(self) -> int:
        return int(self.etas.size)


def build_schedule(cfg: ScheduleConfig) -> EtaSchedule:
    """Evaluate the sqrt-geometric schedule for the given config."""
    t_count = cfg.steps
    b0 = math.exp(math.log(cfg.eta_end / cfg.eta_start) / (2.0 * (t_count - 1)))
    t = np.arange(1, t_count + 1, dtype=np.float64)
    beta = ((t - 1.0) / (t_count - 1.0)) ** cfg.curvature_p * (t_count - 1.0)
    sqrt_eta = math.sqrt(cfg.eta_start) * b0**beta
    etas = sqrt_eta**2
    return EtaSchedule(etas=etas, alphas=np.diff(etas))


def eta_at(schedule: EtaSchedule, t: int) -> float:
    """eta_t for 1-based timestep t."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"timestep {t} outside [1, {schedule.steps}]")
    return float(schedule.etas[t - 1])
