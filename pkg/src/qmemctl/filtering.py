"""Forward filtering/smoothing Riccati solve and Kalman gain schedule.

The error covariance P of the joint (initial-copy, live-state) estimator is
propagated two independent ways on the same grid:

* block cascade, the authoritative path:
      dP1/dt = -P2 C' G^-1 C P2'
      dP2/dt =  P2 (A' - C' G^-1 (C P3 + D B'))
      dP3/dt =  A P3 + P3 A' + B B' - (P3 C' + B D') G^-1 (C P3 + D B')
* full 2n x 2n Riccati, kept as a built-in cross-check:
      dP/dt = sA P + P sA' + sB sB' - K G K',  K = (P sC' + sB D') G^-1.

Both start from every block equal to Re cov(X0), which makes P(0) a
positive-semidefinite singular matrix; nothing in this module factorizes P,
so rank-deficient covariances are handled as-is.  G is inverted once per
solve through its Cholesky factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ode import TimeGrid, integrate_matrix_ode

PSD_WARN_TOL = -1e-8


@dataclass(frozen=True)
class FilterSolution:
    """Grids of smoother/filter covariance blocks and the Kalman gain K(t)."""

    times: np.ndarray
    P1: np.ndarray      # (N+1, n, n), symmetric
    P2: np.ndarray      # (N+1, n, n)
    P3: np.ndarray      # (N+1, n, n), symmetric
    P_full: np.ndarray  # (N+1, 2n, 2n), redundant full-matrix solve
    K: np.ndarray       # (N+1, 2n, r)


def _spd_inverse(g: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    return cho_solve(cho_factor(g), np.eye(g.shape[0]))


def assemble_blocks(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """Assemble [[P1, P2], [P2', P3]] (works on stacked (..., n, n) inputs)."""
    top = np.concatenate([p1, p2], axis=-1)
    bottom = np.concatenate([np.swapaxes(p2, -2, -1), p3], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def filter_rhs_full(P: np.ndarray, sys) -> np.ndarray:
    """Right-hand side of the full 2n x 2n filtering Riccati ODE."""
    ginv = _spd_inverse(sys.G)
    k = (P @ sys.sC.T + sys.sB @ sys.D.T) @ ginv
    return sys.sA @ P + P @ sys.sA.T + sys.sB @ sys.sB.T - k @ sys.G @ k.T


def filter_rhs_blocks(P1: np.ndarray, P2: np.ndarray, P3: np.ndarray, sys):
    """Right-hand sides of the block cascade (dP1, dP2, dP3)."""
    ginv = _spd_inverse(sys.G)
    innov = sys.C @ P3 + sys.D @ sys.B.T
    dp1 = -(P2 @ sys.C.T) @ ginv @ (sys.C @ P2.T)
    dp2 = P2 @ (sys.A.T - sys.C.T @ ginv @ innov)
    dp3 = (
        sys.A @ P3 + P3 @ sys.A.T + sys.B @ sys.B.T
        - (P3 @ sys.C.T + sys.B @ sys.D.T) @ ginv @ innov
    )
    return dp1, dp2, dp3


def kalman_gain(P: np.ndarray, sys) -> np.ndarray:
    """K = (P sC' + sB D') G^-1; rows split into smoother and filter gains."""
    return (P @ sys.sC.T + sys.sB @ sys.D.T) @ _spd_inverse(sys.G)


def solve_filter(sys, cov0: np.ndarray, tau: float, steps: int) -> FilterSolution:
    """Integrate the filtering Riccati equation forward over [0, tau].

    The block cascade is the authoritative solution (cheaper and better
    conditioned); the full-matrix Riccati is integrated alongside it from
    the tiled initial covariance as a redundancy check.  P1 and P3 are
    symmetrized after every accepted step.  The gain schedule K(t) is stored
    at every node from the block solution.  A warning (never an error) is
    emitted if the full covariance dips below PSD tolerance anywhere.
    """
    cov0 = np.asarray(cov0, dtype=float)
    n = sys.n
    ginv = _spd_inverse(sys.G)
    ct_gi = sys.C.T @ ginv
    b_bt = sys.B @ sys.B.T
    b_dt = sys.B @ sys.D.T
    d_bt = sys.D @ sys.B.T
    a_t = sys.A.T

    def blocks_rhs(_t, p):
        p1, p2, p3 = p
        innov = sys.C @ p3 + d_bt
        dp1 = -(p2 @ ct_gi) @ (sys.C @ p2.T)
        dp2 = p2 @ (a_t - ct_gi @ innov)
        dp3 = sys.A @ p3 + p3 @ a_t + b_bt - (p3 @ sys.C.T + b_dt) @ ginv @ innov
        return np.stack([dp1, dp2, dp3])

    def sym_outer(p):
        p[0] = 0.5 * (p[0] + p[0].T)
        p[2] = 0.5 * (p[2] + p[2].T)
        return p

    init_blocks = np.stack([cov0, cov0, cov0])
    block_grid = integrate_matrix_ode(
        blocks_rhs, init_blocks, 0.0, tau, steps, post_step=sym_outer
    )
    p1 = block_grid.values[:, 0]
    p2 = block_grid.values[:, 1]
    p3 = block_grid.values[:, 2]

    sb_dt = sys.sB @ sys.D.T
    sb_sbt = sys.sB @ sys.sB.T

    def full_rhs(_t, p):
        k = (p @ sys.sC.T + sb_dt) @ ginv
        return sys.sA @ p + p @ sys.sA.T + sb_sbt - k @ sys.G @ k.T

    init_full = np.tile(cov0, (2, 2))
    full_grid = integrate_matrix_ode(
        full_rhs, init_full, 0.0, tau, steps, symmetrize=True
    )

    k_top = p2 @ ct_gi
    k_bottom = p3 @ ct_gi + b_dt @ ginv
    k = np.concatenate([k_top, k_bottom], axis=1)

    eigs = np.linalg.eigvalsh(full_grid.values)
    min_eig = float(eigs.min())
    if min_eig < PSD_WARN_TOL:
        node = int(np.unravel_index(eigs.argmin(), eigs.shape)[0])
        warnings.warn(
            f"filter covariance lost positive semidefiniteness: min eigenvalue "
            f"{min_eig:.3e} at t = {block_grid.times[node]:.6g}",
            RuntimeWarning,
        )

    return FilterSolution(
        times=block_grid.times, P1=p1, P2=p2, P3=p3,
        P_full=full_grid.values, K=k,
    )


def hamiltonian_matrix(sys) -> tuple[np.ndarray, np.ndarray]:
    """Hamiltonian matrix of the filtering Riccati flow and its spectrum.

    Returns ([[alpha, beta], [gamma, -alpha']], eigenvalues) with
    alpha = sA - sB D' G^-1 sC, beta = sB (I - D' G^-1 D) sB',
    gamma = sC' G^-1 sC.  The frozen initial-copy coordinates force a zero
    eigenvalue of algebraic multiplicity at least 2n.  Diagnostic only;
    nothing downstream consumes the spectrum.
    """
    ginv = _spd_inverse(sys.G)
    alpha = sys.sA - sys.sB @ sys.D.T @ ginv @ sys.sC
    beta = sys.sB @ (np.eye(sys.m) - sys.D.T @ ginv @ sys.D) @ sys.sB.T
    gamma = sys.sC.T @ ginv @ sys.sC
    top = np.concatenate([alpha, beta], axis=1)
    bottom = np.concatenate([gamma, -alpha.T], axis=1)
    h = np.concatenate([top, bottom], axis=0)
    return h, np.linalg.eigvals(h)
