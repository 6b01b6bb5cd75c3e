"""Backward control Riccati solve and the optimal feedback gain schedule.

Mirrors the filtering module: the block cascade

    dQ1/dt = Q2' E Pi^-1 E' Q2
    dQ2/dt = (Q3 E Pi^-1 E' - A') Q2
    dQ3/dt = Q3 E Pi^-1 E' Q3 - A' Q3 - Q3 A

is integrated backward from Q1(tau) = Q3(tau) = Sigma, Q2(tau) = -Sigma
(the blocks of the terminal weight Lambda), alongside the redundant full
2n x 2n Riccati dQ/dt = Q sE Pi^-1 sE' Q - sA' Q - Q sA from Q(tau) = Lambda.
The feedback gain is c(t) = -Pi^-1 E' [Q2(t), Q3(t)] at every node, on the
same grid the filter uses.  With no actuator channels (d = 0) everything
degenerates to backward Lyapunov equations and a zero-width gain, which is
kept as the uncontrolled baseline mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .ode import integrate_matrix_ode

PSD_WARN_TOL = -1e-8


@dataclass(frozen=True)
class ControlSolution:
    """Grids of control Riccati blocks, the gain c(t), and the penalty used."""

    times: np.ndarray
    Q1: np.ndarray      # (N+1, n, n), symmetric
    Q2: np.ndarray      # (N+1, n, n)
    Q3: np.ndarray      # (N+1, n, n), symmetric
    Q_full: np.ndarray  # (N+1, 2n, 2n)
    c: np.ndarray       # (N+1, d, 2n)
    Pi: np.ndarray      # (d, d)


def assemble_blocks(q1: np.ndarray, q2: np.ndarray, q3: np.ndarray) -> np.ndarray:
    """Assemble [[Q1, Q2'], [Q2, Q3]] (works on stacked (..., n, n) inputs)."""
    top = np.concatenate([q1, np.swapaxes(q2, -2, -1)], axis=-1)
    bottom = np.concatenate([q2, q3], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def control_rhs_full(Q: np.ndarray, sys, Pi: np.ndarray) -> np.ndarray:
    """Right-hand side of the full control Riccati ODE."""
    pi_inv = np.linalg.inv(Pi)
    return Q @ sys.sE @ pi_inv @ sys.sE.T @ Q - sys.sA.T @ Q - Q @ sys.sA


def control_rhs_blocks(Q1: np.ndarray, Q2: np.ndarray, Q3: np.ndarray, sys, Pi: np.ndarray):
    """Right-hand sides of the block cascade (dQ1, dQ2, dQ3)."""
    e_pi_et = sys.E @ np.linalg.inv(Pi) @ sys.E.T
    dq1 = Q2.T @ e_pi_et @ Q2
    dq2 = (Q3 @ e_pi_et - sys.A.T) @ Q2
    dq3 = Q3 @ e_pi_et @ Q3 - sys.A.T @ Q3 - Q3 @ sys.A
    return dq1, dq2, dq3


def feedback_gain(Q2: np.ndarray, Q3: np.ndarray, sys, Pi: np.ndarray) -> np.ndarray:
    """Optimal feedback gain c = -Pi^-1 E' [Q2, Q3], of shape (d, 2n)."""
    return -np.linalg.inv(Pi) @ sys.E.T @ np.concatenate([Q2, Q3], axis=-1)


def solve_control(sys, Pi: np.ndarray, tau: float, steps: int) -> ControlSolution:
    """Integrate the control Riccati equation backward over [0, tau].

    The terminal node is assigned, not integrated, so Q1(tau) = Sigma,
    Q2(tau) = -Sigma, Q3(tau) = Sigma hold exactly.  Q1 and Q3 are
    symmetrized after every accepted step; positive semidefiniteness of the
    full solution is monitored and reported as a warning only.
    """
    Pi = np.asarray(Pi, dtype=float)
    pi_inv = np.linalg.inv(Pi)
    e_pi_et = sys.E @ pi_inv @ sys.E.T
    a_t = sys.A.T

    def blocks_rhs(_t, q):
        q1, q2, q3 = q
        drive = q3 @ e_pi_et
        dq1 = q2.T @ e_pi_et @ q2
        dq2 = (drive - a_t) @ q2
        dq3 = drive @ q3 - a_t @ q3 - q3 @ sys.A
        return np.stack([dq1, dq2, dq3])

    def sym_outer(q):
        q[0] = 0.5 * (q[0] + q[0].T)
        q[2] = 0.5 * (q[2] + q[2].T)
        return q

    sigma = sys.Sigma
    init_blocks = np.stack([sigma, -sigma, sigma])
    block_grid = integrate_matrix_ode(
        blocks_rhs, init_blocks, 0.0, tau, steps, direction="backward", post_step=sym_outer
    )
    q1 = block_grid.values[:, 0]
    q2 = block_grid.values[:, 1]
    q3 = block_grid.values[:, 2]

    se_pi_set = sys.sE @ pi_inv @ sys.sE.T

    def full_rhs(_t, q):
        return q @ se_pi_set @ q - sys.sA.T @ q - q @ sys.sA

    full_grid = integrate_matrix_ode(
        full_rhs, sys.Lambda, 0.0, tau, steps, direction="backward", symmetrize=True
    )

    gain_head = -pi_inv @ sys.E.T  # (d, n)
    c = gain_head @ np.concatenate([q2, q3], axis=-1)  # (N+1, d, 2n)

    eigs = np.linalg.eigvalsh(full_grid.values)
    min_eig = float(eigs.min())
    if min_eig < PSD_WARN_TOL:
        node = int(np.unravel_index(eigs.argmin(), eigs.shape)[0])
        warnings.warn(
            f"control Riccati solution lost positive semidefiniteness: min eigenvalue "
            f"{min_eig:.3e} at t = {block_grid.times[node]:.6g}",
            RuntimeWarning,
        )

    return ControlSolution(
        times=block_grid.times, Q1=q1, Q2=q2, Q3=q3,
        Q_full=full_grid.values, c=c, Pi=Pi,
    )
