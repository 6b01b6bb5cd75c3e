"""Fixed-step matrix ODE integration on a uniform grid.

Classical 4th-order Runge-Kutta over matrix-valued (or generally
ndarray-valued) states, forward or backward in time.  Backward solves reuse
the forward stepper through the substitution t -> t0 + t1 - t with a negated
right-hand side, and grids are always stored ascending in time.  A fixed
uniform grid (rather than adaptive stepping) keeps the filter, control and
moment solutions on shared nodes so gain schedules never have to be
resampled against each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError


@dataclass(frozen=True)
class TimeGrid:
    """Uniformly spaced times (ascending) and one state per node."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("values and times must have one entry per node")

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def _rk4(rhs, init, t0, t1, steps, symmetrize, post_step, clock):
    """Forward RK4 loop; `clock` maps integration time to reported time."""
    state = np.array(init, dtype=float)
    h = (t1 - t0) / steps
    times = t0 + h * np.arange(steps + 1)
    times[-1] = t1
    values = np.empty((steps + 1,) + state.shape)
    values[0] = state
    for k in range(steps):
        t = times[k]
        t_next = times[k + 1]  # exact node time; t + h may overshoot t1 by an ulp
        k1 = rhs(t, state)
        k2 = rhs(t + 0.5 * h, state + (0.5 * h) * k1)
        k3 = rhs(t + 0.5 * h, state + (0.5 * h) * k2)
        k4 = rhs(t_next, state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if symmetrize:
            state = 0.5 * (state + np.swapaxes(state, -2, -1))
        if post_step is not None:
            state = post_step(state)
        if not np.all(np.isfinite(state)):
            raise DivergenceError(
                f"non-finite state at step {k + 1} of {steps} (t = {clock(times[k + 1]):.6g})"
            )
        values[k + 1] = state
    return times, values


def integrate_matrix_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    init: np.ndarray,
    t0: float,
    t1: float,
    steps: int,
    direction: str = "forward",
    symmetrize: bool = False,
    post_step: Callable[[np.ndarray], np.ndarray] | None = None,
) -> TimeGrid:
    """Integrate d(state)/dt = rhs(t, state) with fixed-step RK4.

    Parameters
    ----------
    init : ndarray
        State at t0 for forward solves, at t1 for backward solves.
    direction : "forward" | "backward"
        Backward integrates from t1 down to t0; the result is re-indexed so
        the returned grid is ascending in time either way (the terminal node
        therefore holds `init` exactly).
    symmetrize : bool
        Replace each accepted state by its symmetric part (S + S') / 2.
    post_step : callable, optional
        Applied to each accepted state after symmetrization; used for
        structure fixes on stacked block states.

    Raises
    ------
    DivergenceError
        If any state entry stops being finite, naming the step and time.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    if direction == "forward":
        times, values = _rk4(rhs, init, t0, t1, steps, symmetrize, post_step, lambda t: t)
        return TimeGrid(times, values)
    if direction == "backward":
        # Time reversal: s = t0 + t1 - t turns the terminal-value problem into
        # an initial-value problem for the negated right-hand side.
        pivot = t0 + t1

        def reversed_rhs(s, state):
            return -rhs(pivot - s, state)

        times, values = _rk4(
            reversed_rhs, init, t0, t1, steps, symmetrize, post_step, lambda s: pivot - s
        )
        return TimeGrid(times, values[::-1].copy())
    raise ValueError(f"unknown direction {direction!r}")


def sample_grid(grid: TimeGrid, t: float) -> np.ndarray:
    """Linearly interpolate the grid at time t; exact at the nodes."""
    times = grid.times
    fuzz = 64.0 * np.finfo(float).eps * max(1.0, abs(times[0]), abs(times[-1]))
    if t < times[0] - fuzz or t > times[-1] + fuzz:
        raise ValueError(f"t = {t} outside grid range [{times[0]}, {times[-1]}]")
    t = min(max(t, float(times[0])), float(times[-1]))
    if len(times) == 1:
        return grid.values[0].copy()
    idx = int(np.searchsorted(times, t, side="right")) - 1
    idx = min(max(idx, 0), len(times) - 2)
    w = (t - times[idx]) / (times[idx + 1] - times[idx])
    return (1.0 - w) * grid.values[idx] + w * grid.values[idx + 1]
