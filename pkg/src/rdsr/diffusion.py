"""Deterministic residual-interpolation diffusion.

Forward: y_t = hr + eta_t * (lr_up - hr), a convex slide from the clean
image (eta -> 0) toward its blurry upsampled counterpart (eta -> 1).

Reverse: given a prediction y0_hat of the clean image,

    y_{t-1} = (eta_{t-1} / eta_t) * y_t + (alpha_t / eta_t) * y0_hat

with alpha_t = eta_t - eta_{t-1}. The coefficients are nonnegative and sum
to one, and with an exact prediction the step inverts the forward blend
algebraically. The terminal step uses the eta_0 = 0 convention, which
collapses to returning the last prediction.

No randomness anywhere: sampling is a pure function of (weights, input,
schedule). The one noisy entry point, `noisy_forward_state`, exists solely
to render a Gaussian-degradation baseline strip next to the deterministic
one and takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .imaging import ImagePlane
from .schedule import EtaSchedule, eta_at

Predictor = Callable[[ImagePlane, int, ImagePlane], ImagePlane]


@dataclass(frozen=True)
class DiffusionState:
    """An image tagged with its timestep; t = 0 is the clean end."""

    image: ImagePlane
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"timestep must be >= 0, got {self.t}")


@dataclass(frozen=True)
class Trajectory:
    states: tuple[DiffusionState, ...]
    direction: Literal["forward", "reverse"]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"direction must be forward or reverse, got {self.direction!r}")
        if not self.states:
            raise ValueError("trajectory needs at least one state")
        shape = self.states[0].image.shape
        if any(s.image.shape != shape for s in self.states):
            raise ValueError("all trajectory states must share one shape")
        ts = [s.t for s in self.states]
        diffs = np.diff(ts)
        if self.direction == "forward" and not np.all(diffs > 0):
            raise ValueError("forward trajectory timesteps must strictly increase")
        if self.direction == "reverse" and not np.all(diffs < 0):
            raise ValueError("reverse trajectory timesteps must strictly decrease")


def _check_same_shape(a: ImagePlane, b: ImagePlane, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_state(
    hr: ImagePlane, lr_up: ImagePlane, schedule: EtaSchedule, t: int
) -> DiffusionState:
    """Blend an eta_t fraction of the degradation residual into the clean image."""
    _check_same_shape(hr, lr_up, "forward_state")
    eta = eta_at(schedule, t)
    out = hr.data + eta * (lr_up.data - hr.data)
    return DiffusionState(image=ImagePlane.from_array(out), t=t)


def reverse_step(
    state: DiffusionState, y0_hat: ImagePlane, schedule: EtaSchedule
) -> DiffusionState:
    """One deterministic reconstruction step from t down to t - 1."""
    t = state.t
    if t < 2:
        raise ValueError(f"reverse_step needs t >= 2 (got t={t}); use final_step at t=1")
    if t > schedule.steps:
        raise ValueError(f"timestep {t} outside [2, {schedule.steps}]")
    _check_same_shape(state.image, y0_hat, "reverse_step")
    eta_t = schedule.etas[t - 1]
    eta_prev = schedule.etas[t - 2]
    keep = eta_prev / eta_t
    pull = schedule.alphas[t - 2] / eta_t
    out = keep * state.image.data + pull * y0_hat.data
    return DiffusionState(image=ImagePlane.from_array(out), t=t - 1)


def final_step(
    state: DiffusionState, y0_hat: ImagePlane, schedule: EtaSchedule
) -> ImagePlane:
    """Terminal step from t = 1; with eta_0 = 0 this is the last prediction."""
    if state.t != 1:
        raise ValueError(f"final_step requires t = 1, got t={state.t}")
    _check_same_shape(state.image, y0_hat, "final_step")
    return y0_hat


def sample(
    lr_up: ImagePlane, predictor: Predictor, schedule: EtaSchedule
) -> tuple[ImagePlane, Trajectory]:
    """Run the full reverse process starting from the upsampled input.

    The predictor is called as predictor(state_image, t, lr_up) and must
    return the clean-image estimate at the same shape. Returns the final
    estimate and the visited states from t = T down to t = 0.
    """
    t_total = schedule.steps
    state = DiffusionState(image=lr_up, t=t_total)
    visited = [state]
    for t in range(t_total, 1, -1):
        y0_hat = predictor(state.image, t, lr_up)
        _check_same_shape(state.image, y0_hat, "sample predictor output")
        state = reverse_step(state, y0_hat, schedule)
        visited.append(state)
    y0_hat = predictor(state.image, 1, lr_up)
    out = final_step(state, y0_hat, schedule)
    visited.append(DiffusionState(image=out, t=0))
    return out, Trajectory(states=tuple(visited), direction="reverse")


def forward_trajectory(
    hr: ImagePlane, lr_up: ImagePlane, schedule: EtaSchedule
) -> Trajectory:
    """Degradation states t = 1..T for visualization."""
    states = [forward_state(hr, lr_up, schedule, t) for t in range(1, schedule.steps + 1)]
    return Trajectory(states=tuple(states), direction="forward")


def noisy_forward_state(
    hr: ImagePlane,
    lr_up: ImagePlane,
    schedule: EtaSchedule,
    t: int,
    kappa: float,
    seed: int,
) -> DiffusionState:
    """Gaussian-degradation baseline: the deterministic blend plus
    kappa * sqrt(eta_t) * eps with seeded standard-normal eps.

    kappa = 0 reproduces `forward_state` bitwise.
    """
    if kappa < 0.0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    base = forward_state(hr, lr_up, schedule, t)
    if kappa == 0.0:
        return base
    eta = eta_at(schedule, t)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(size=base.image.shape)
    out = base.image.data + kappa * np.sqrt(eta) * eps
    return DiffusionState(image=ImagePlane.from_array(out), t=t)
