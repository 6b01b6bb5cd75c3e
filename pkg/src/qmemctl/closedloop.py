"""Closed-loop second moments, cost functionals and decoherence time.

Given the filter gain schedule K(t) and control gain schedule c(t) on a
shared grid, the controller-state second moment T obeys the Lyapunov ODE

    dT/dt = (sA + sE c) T + T (sA + sE c)' + K G K'

from T(0) = [[1,1],[1,1]] kron (EX0 EX0').  The plant-plus-initial-copy
second moment is S = T + P (the controller state and the estimation error
are uncorrelated, which the Monte Carlo oracle verifies statistically), the
mean-square deviation is Delta(t) = <Lambda, S(t)>, and the running cost is

    Phi(t) = Delta(t) + int_0^t <c' Pi c, T> ds.

All quadratures are composite trapezoid on the shared grid, which keeps the
minimum-cost identity discretization-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .ode import TimeGrid, integrate_matrix_ode, sample_grid


@dataclass(frozen=True)
class ClosedLoopSolution:
    """Closed-loop moment grids and scalar diagnostics."""

    times: np.ndarray
    T: np.ndarray       # (N+1, 2n, 2n)
    S: np.ndarray       # (N+1, 2n, 2n), S = T + P
    Delta: np.ndarray   # (N+1,) mean-square deviation
    Phi: np.ndarray     # (N+1,) running cost
    H_pont: np.ndarray  # (N+1,) Pontryagin Hamiltonian
    U_mean: np.ndarray  # (N+1, d) mean actuator signal
    x_mean: np.ndarray  # (N+1, 2n) mean controller state


def _trapz(values: np.ndarray, h: float) -> float:
    if values.shape[0] < 2:
        return 0.0
    return float(h * (0.5 * (values[0] + values[-1]) + values[1:-1].sum()))


def _cumtrapz(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(values)
    if values.shape[0] > 1:
        out[1:] = np.cumsum(0.5 * h * (values[1:] + values[:-1]))
    return out


def moment_rhs(T: np.ndarray, c_t: np.ndarray, K_t: np.ndarray, sys) -> np.ndarray:
    """Lyapunov right-hand side (sA + sE c) T + T (.)' + K G K'."""
    a_cl = sys.sA + sys.sE @ c_t
    return a_cl @ T + T @ a_cl.T + K_t @ sys.G @ K_t.T


def solve_closed_loop(
    sys,
    filter_sol,
    control_sol,
    mean0: np.ndarray,
    tau: float,
    gain_override: np.ndarray | None = None,
) -> ClosedLoopSolution:
    """Propagate closed-loop moments and assemble every scalar diagnostic.

    `gain_override`, when given, replaces the optimal gain grid c(t) node for
    node (same shape); used for perturbation studies around the optimum.
    Both input solutions must share their time grid.
    """
    if not np.array_equal(filter_sol.times, control_sol.times):
        raise GridMismatchError("filter and control solutions use different grids")
    times = filter_sol.times
    if abs(times[-1] - tau) > 1e-9 * max(1.0, abs(tau)):
        raise GridMismatchError(f"grid ends at {times[-1]}, expected tau = {tau}")
    steps = len(times) - 1
    mean0 = np.asarray(mean0, dtype=float).reshape(-1)

    c_values = control_sol.c if gain_override is None else np.asarray(gain_override, dtype=float)
    if c_values.shape != control_sol.c.shape:
        raise GridMismatchError(
            f"gain override shape {c_values.shape} != {control_sol.c.shape}"
        )
    c_grid = TimeGrid(times, c_values)
    k_grid = TimeGrid(times, filter_sol.K)

    def t_rhs(t, state):
        return moment_rhs(state, sample_grid(c_grid, t), sample_grid(k_grid, t), sys)

    t0_matrix = np.kron(np.ones((2, 2)), np.outer(mean0, mean0))
    t_solution = integrate_matrix_ode(t_rhs, t0_matrix, 0.0, tau, steps, symmetrize=True)
    moments = t_solution.values

    def mean_rhs(t, state):
        return (sys.sA + sys.sE @ sample_grid(c_grid, t)) @ state

    x_mean = integrate_matrix_ode(
        mean_rhs, np.concatenate([mean0, mean0]), 0.0, tau, steps
    ).values

    s_values = moments + filter_sol.P_full
    delta = np.einsum("ij,tij->t", sys.Lambda, s_values)

    pi = control_sol.Pi
    energy = np.einsum("tai,ab,tbj,tij->t", c_values, pi, c_values, moments)
    h = (times[-1] - times[0]) / steps if steps else 0.0
    phi = delta + _cumtrapz(energy, h)

    # Pontryagin Hamiltonian at the nodes, using the optimal Riccati solution.
    q = control_sol.Q_full
    pi_inv = np.linalg.inv(pi)
    se_pi_set = sys.sE @ pi_inv @ sys.sE.T
    q_dot = q @ se_pi_set @ q - sys.sA.T @ q - q @ sys.sA
    kg = filter_sol.K @ sys.G
    kgk = kg @ np.swapaxes(filter_sol.K, -2, -1)
    h_pont = np.einsum("tij,tij->t", q, kgk) - np.einsum("tij,tij->t", q_dot, moments)

    u_mean = np.einsum("tij,tj->ti", c_values, x_mean)

    return ClosedLoopSolution(
        times=times, T=moments, S=s_values, Delta=delta, Phi=phi,
        H_pont=h_pont, U_mean=u_mean, x_mean=x_mean,
    )


def deviation(S_t: np.ndarray, Lambda: np.ndarray) -> float:
    """Frobenius inner product <Lambda, S>."""
    return float(np.sum(Lambda * S_t))


def cost(solution: ClosedLoopSolution, control_sol, Pi: np.ndarray) -> float:
    """Terminal-plus-integral cost Phi(tau) = Delta(tau) + int <c' Pi c, T> dt."""
    times = solution.times
    h = (times[-1] - times[0]) / (len(times) - 1)
    energy = np.einsum("tai,ab,tbj,tij->t", control_sol.c, Pi, control_sol.c, solution.T)
    return float(solution.Delta[-1]) + _trapz(energy, h)


def min_cost_identity(filter_sol, control_sol, T0: np.ndarray, Lambda: np.ndarray,
                      G: np.ndarray) -> float:
    """Closed-form minimum cost <Lambda, P(tau)> + <Q(0), T(0)> + int <Q, K G K'> dt."""
    times = filter_sol.times
    h = (times[-1] - times[0]) / (len(times) - 1)
    kg = filter_sol.K @ G
    kgk = kg @ np.swapaxes(filter_sol.K, -2, -1)
    integrand = np.einsum("tij,tij->t", control_sol.Q_full, kgk)
    return (
        float(np.sum(Lambda * filter_sol.P_full[-1]))
        + float(np.sum(control_sol.Q_full[0] * T0))
        + _trapz(integrand, h)
    )


def pontryagin_hamiltonian(Q_t: np.ndarray, T_t: np.ndarray, K_t: np.ndarray,
                           G: np.ndarray, Qdot_t: np.ndarray) -> float:
    """<Q, K G K'> - <dQ/dt, T>, constant in time on the optimal trajectory."""
    return float(np.sum(Q_t * (K_t @ G @ K_t.T)) - np.sum(Qdot_t * T_t))


def bellman_value(t: float, Gamma: np.ndarray, control_sol, filter_sol,
                  G: np.ndarray) -> float:
    """Value function <Q(t), Gamma> + int_t^tau <Q, K G K'> dv at a grid node."""
    times = control_sol.times
    span = max(1.0, float(times[-1] - times[0]))
    matches = np.nonzero(np.abs(times - t) <= 1e-9 * span)[0]
    if matches.size == 0:
        raise ValueError(f"t = {t} is not a grid node")
    idx = int(matches[0])
    h = (times[-1] - times[0]) / (len(times) - 1)
    kg = filter_sol.K[idx:] @ G
    kgk = kg @ np.swapaxes(filter_sol.K[idx:], -2, -1)
    tail = np.einsum("tij,tij->t", control_sol.Q_full[idx:], kgk)
    return float(np.sum(control_sol.Q_full[idx] * Gamma)) + _trapz(tail, h)


def decoherence_time(times: np.ndarray, phi: np.ndarray, epsilon: float,
                     phi_star: float) -> float | None:
    """First time the running cost reaches epsilon * phi_star, or None.

    The crossing is refined by linear interpolation between the bracketing
    nodes.  Raises ValueError when the threshold epsilon * phi_star is not
    positive.
    """
    threshold = epsilon * phi_star
    if not threshold > 0:
        raise ValueError(f"epsilon * phi_star must be positive, got {threshold}")
    times = np.asarray(times, dtype=float)
    phi = np.asarray(phi, dtype=float)
    reached = np.nonzero(phi >= threshold)[0]
    if reached.size == 0:
        return None
    idx = int(reached[0])
    if idx == 0:
        return float(times[0])
    rise = phi[idx] - phi[idx - 1]
    w = (threshold - phi[idx - 1]) / rise if rise > 0 else 1.0
    return float(times[idx - 1] + w * (times[idx] - times[idx - 1]))
