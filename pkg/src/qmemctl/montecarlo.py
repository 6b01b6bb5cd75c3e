"""Independent Monte Carlo oracle for the moment-level pipeline.

The closed loop is driven by vacuum-state field channels whose quantum Ito
matrix has identity real part, so the real parts of the first and second
moments of the linear plant/controller equations coincide with those of a
classical linear SDE driven by a standard Wiener process.  That classical
surrogate is simulated here path by path with Euler-Maruyama:

    X0 = mean0 + cov0_factor . zeta,  sX(0) = (X0; X0),  x(0) = (1;1) kron mean0
    U  = c(t) x
    dZ = sC sX h + D dw sqrt(h)
    dV = dZ - sC x h
    sX += (sA sX + sE U) h + sB dw sqrt(h)
    x  += (sA x + sE U) h + K(t) dV

with gains linearly interpolated between grid nodes.  Higher-order schemes
would buy nothing because the gain schedules are only piecewise linear in
time.  Each path owns a generator seeded by base_seed XOR splitmix64(index),
so ensembles are reproducible, order-independent and parallel-safe; paths
are accumulated in path-index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DivergenceError, GridMismatchError

_MASK64 = (1 << 64) - 1

# Noise is generated in time windows of at most this many doubles per path
# batch, which bounds peak memory without changing any per-path stream.
_NOISE_BUDGET = 1 << 24


def splitmix64(value: int) -> int:
    """One step of the splitmix64 mixer (64-bit avalanche function)."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_path_seed(base_seed: int, index: int) -> int:
    return (int(base_seed) & _MASK64) ^ splitmix64(int(index))


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative round-off eigenvalues clip to 0."""
    sym = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    w, v = np.linalg.eigh(sym)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True)
class GainSchedule:
    """Node times with the filter gain K(t), feedback gain c(t) and penalty."""

    times: np.ndarray  # (N+1,)
    K: np.ndarray      # (N+1, 2n, r)
    c: np.ndarray      # (N+1, d, 2n)
    Pi: np.ndarray     # (d, d)


def gain_schedule(filter_sol, control_sol) -> GainSchedule:
    if not np.array_equal(filter_sol.times, control_sol.times):
        raise GridMismatchError("filter and control gains live on different grids")
    return GainSchedule(filter_sol.times, filter_sol.K, control_sol.c, control_sol.Pi)


@dataclass(frozen=True)
class SurrogateState:
    """Joint surrogate state at one instant: plant copy pair and controller."""

    t: float
    sX: np.ndarray  # (2n,) = (X0; X(t))
    x: np.ndarray   # (2n,) = (X0 estimate; X(t) estimate)


@dataclass(frozen=True)
class SurrogatePath:
    """One simulated path sampled at the gain-grid nodes."""

    times: np.ndarray
    sX: np.ndarray            # (N+1, 2n)
    x: np.ndarray             # (N+1, 2n)
    control_energy: float     # per-path int ||U||_Pi^2 dt (substep trapezoid)

    def state_at(self, index: int) -> SurrogateState:
        return SurrogateState(float(self.times[index]), self.sX[index], self.x[index])


@dataclass(frozen=True)
class SampleMoments:
    """Ensemble statistics accumulated at every grid node.

    `mean_y` and `second_y` are the empirical first/second moments of the
    stacked vector y = (sX; x).  `cross_xe` is the empirical mean of the
    outer product x e' with e = sX - x, and `cross_xe_sq` the mean of its
    entrywise squares (kept so entrywise standard errors are available).
    Terminal-scalar statistics carry standard errors directly.
    """

    paths: int
    times: np.ndarray
    mean_y: np.ndarray
    second_y: np.ndarray
    cross_xe: np.ndarray
    cross_xe_sq: np.ndarray
    deviation_mean: float
    deviation_se: float
    smoothing_sqerr_mean: float
    smoothing_sqerr_se: float
    control_energy_mean: float
    control_energy_se: float
    cost_mean: float
    cost_se: float

    @property
    def joint_dim(self) -> int:
        return self.mean_y.shape[1] // 2

    def e_mean(self) -> np.ndarray:
        k = self.joint_dim
        return self.mean_y[:, :k] - self.mean_y[:, k:]

    def e_second(self) -> np.ndarray:
        k = self.joint_dim
        s = self.second_y
        return s[:, :k, :k] - s[:, :k, k:] - s[:, k:, :k] + s[:, k:, k:]

    def x_second(self) -> np.ndarray:
        k = self.joint_dim
        return self.second_y[:, k:, k:]

    def e_mean_se(self) -> np.ndarray:
        var = np.einsum("tii->ti", self.e_second()) - self.e_mean() ** 2
        return np.sqrt(np.clip(var, 0.0, None) / max(self.paths - 1, 1))

    def cross_xe_se(self) -> np.ndarray:
        var = self.cross_xe_sq - self.cross_xe ** 2
        return np.sqrt(np.clip(var, 0.0, None) / max(self.paths - 1, 1))


def _substep_gains(gains: GainSchedule, substeps_per_node: int):
    """Gains linearly interpolated at the left endpoint of every substep."""
    times = gains.times
    steps = len(times) - 1
    sub = substeps_per_node
    total = steps * sub
    node = np.arange(total) // sub
    frac = (np.arange(total) % sub) / sub
    k_sub = (1.0 - frac)[:, None, None] * gains.K[node] + frac[:, None, None] * gains.K[node + 1]
    c_sub = (1.0 - frac)[:, None, None] * gains.c[node] + frac[:, None, None] * gains.c[node + 1]
    h = float(times[-1] - times[0]) / total
    return h, k_sub, c_sub


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    count = values.shape[0]
    mean = float(values.mean()) if count else 0.0
    if count < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / np.sqrt(count))


def _propagate(sys, gains: GainSchedule, mean0, cov0_factor, seeds,
               substeps_per_node: int, record_paths: bool):
    """Vectorized Euler-Maruyama over all requested paths.

    The per-substep update of the joint row state y = (sX, x) is the affine
    map y <- y M_j' + dw N_j' with

        M_j = [[I + h sA,    h sE c_j              ],
               [h K_j sC,    I + h (sA + sE c_j) - h K_j sC]],
        N_j = [[sqrt(h) sB], [sqrt(h) K_j D]],

    which is the innovation-driven scheme dZ = sC sX h + D dw sqrt(h),
    dV = dZ - sC x h, sX += (sA sX + sE U) h + sB dw sqrt(h),
    x += (sA x + sE U) h + K dV with U = c x, folded into one step.
    Accumulation happens in path-index order with a layout that depends only
    on (seeds, substeps), so results are bit-reproducible.
    """
    mean0 = np.asarray(mean0, dtype=float).reshape(-1)
    cov0_factor = np.asarray(cov0_factor, dtype=float)
    times = gains.times
    steps = len(times) - 1
    sub = int(substeps_per_node)
    if sub < 1:
        raise ValueError(f"substeps_per_node must be >= 1, got {sub}")
    total = steps * sub
    h, k_sub, c_sub = _substep_gains(gains, sub)
    sqrt_h = np.sqrt(h)

    n, m = sys.n, sys.m
    twon = 2 * n
    count = len(seeds)
    rngs = [np.random.default_rng(int(s)) for s in seeds]

    zeta = np.empty((count, n))
    for i, rng in enumerate(rngs):
        zeta[i] = rng.standard_normal(n)
    x0 = mean0[None, :] + zeta @ cov0_factor.T
    y_state = np.concatenate([x0, x0, np.tile(np.concatenate([mean0, mean0]), (count, 1))],
                             axis=1)

    # Per-substep combined update operators (transposed for row states).
    eye = np.eye(twon)
    se_c = np.matmul(sys.sE, c_sub)            # (S, 2n, 2n)
    k_sc = np.matmul(k_sub, sys.sC)            # (S, 2n, 2n)
    m_op = np.empty((total, 2 * twon, 2 * twon))
    m_op[:, :twon, :twon] = eye + h * sys.sA
    m_op[:, :twon, twon:] = h * se_c
    m_op[:, twon:, :twon] = h * k_sc
    m_op[:, twon:, twon:] = eye + h * (sys.sA + se_c) - h * k_sc
    m_t = np.ascontiguousarray(np.swapaxes(m_op, 1, 2))
    del m_op, se_c, k_sc
    n_op = np.empty((total, 2 * twon, m))
    n_op[:, :twon, :] = sqrt_h * sys.sB
    n_op[:, twon:, :] = sqrt_h * np.matmul(k_sub, sys.D)
    n_t = np.ascontiguousarray(np.swapaxes(n_op, 1, 2))
    del n_op

    # Energy integrand ||U||_Pi^2 = |L_j x|^2 with L_j = sqrt(Pi) c_j.
    pi_sqrt = psd_sqrt(gains.Pi)
    l_t = np.ascontiguousarray(np.swapaxes(np.matmul(pi_sqrt, c_sub), 1, 2))
    l_t_final = (pi_sqrt @ gains.c[-1]).T

    mean_sum = np.zeros((steps + 1, 2 * twon))
    second_sum = np.zeros((steps + 1, 2 * twon, 2 * twon))
    cross_sum = np.zeros((steps + 1, twon, twon))
    cross_sq_sum = np.zeros((steps + 1, twon, twon))
    if record_paths:
        traj_s = np.empty((count, steps + 1, twon))
        traj_x = np.empty((count, steps + 1, twon))

    def take_node(node_idx: int, substep_idx: int):
        if not np.isfinite(y_state).all():
            finite = np.isfinite(y_state).all(axis=1)
            bad = int(np.nonzero(~finite)[0][0])
            raise DivergenceError(
                f"non-finite path state (seed {int(seeds[bad])}) at substep "
                f"{substep_idx} (t = {times[0] + substep_idx * h:.6g})"
            )
        mean_sum[node_idx] += y_state.sum(axis=0)
        second_sum[node_idx] += y_state.T @ y_state
        x_part = y_state[:, twon:]
        err = y_state[:, :twon] - x_part
        outer = x_part[:, :, None] * err[:, None, :]
        cross_sum[node_idx] += outer.sum(axis=0)
        cross_sq_sum[node_idx] += (outer * outer).sum(axis=0)
        if record_paths:
            traj_s[:, node_idx] = y_state[:, :twon]
            traj_x[:, node_idx] = x_part

    take_node(0, 0)
    energy = np.zeros(count)
    g_prev = np.zeros(count)
    window = max(1, min(total, _NOISE_BUDGET // max(1, count * m)))

    j = 0
    while j < total:
        width = min(window, total - j)
        noise = np.empty((count, width, m))
        for i, rng in enumerate(rngs):
            noise[i] = rng.standard_normal((width, m))
        for k in range(width):
            g = ((y_state[:, twon:] @ l_t[j]) ** 2).sum(axis=1)
            if j > 0:
                energy += (0.5 * h) * (g_prev + g)
            g_prev = g
            y_state = y_state @ m_t[j] + noise[:, k, :] @ n_t[j]
            j += 1
            if j % sub == 0:
                take_node(j // sub, j)
        del noise

    g_final = ((y_state[:, twon:] @ l_t_final) ** 2).sum(axis=1)
    energy += (0.5 * h) * (g_prev + g_final)

    s_final = y_state[:, :twon]
    x_final = y_state[:, twon:]
    deviation = np.einsum("bi,ij,bj->b", s_final, sys.Lambda, s_final)
    smoothing = ((s_final[:, :n] - x_final[:, :n]) ** 2).sum(axis=1)
    cost_paths = deviation + energy

    dev_mean, dev_se = _mean_se(deviation)
    smooth_mean, smooth_se = _mean_se(smoothing)
    energy_mean, energy_se = _mean_se(energy)
    cost_mean, cost_se = _mean_se(cost_paths)

    moments = SampleMoments(
        paths=count,
        times=times,
        mean_y=mean_sum / count,
        second_y=second_sum / count,
        cross_xe=cross_sum / count,
        cross_xe_sq=cross_sq_sum / count,
        deviation_mean=dev_mean,
        deviation_se=dev_se,
        smoothing_sqerr_mean=smooth_mean,
        smoothing_sqerr_se=smooth_se,
        control_energy_mean=energy_mean,
        control_energy_se=energy_se,
        cost_mean=cost_mean,
        cost_se=cost_se,
    )
    if record_paths:
        return moments, traj_s, traj_x, energy
    return moments, None, None, energy


def sample_path(sys, gains: GainSchedule, mean0, cov0_factor, seed: int,
                substeps_per_node: int = 4) -> SurrogatePath:
    """Simulate one path, recorded at the gain-grid nodes.

    `cov0_factor` is any matrix square root of the initial covariance (see
    psd_sqrt).  Identical seeds reproduce bit-identical paths.
    """
    moments, traj_s, traj_x, energy = _propagate(
        sys, gains, mean0, cov0_factor, [seed], substeps_per_node, record_paths=True
    )
    return SurrogatePath(moments.times, traj_s[0], traj_x[0], float(energy[0]))


def simulate_ensemble(sys, gains: GainSchedule, mean0, cov0, paths: int,
                      base_seed: int, substeps_per_node: int = 4,
                      seeds: Sequence[int] | None = None) -> SampleMoments:
    """Simulate an ensemble and accumulate empirical moments per node.

    Seeds default to derive_path_seed(base_seed, i) for i = 0..paths-1; the
    `seeds` override exists for degenerate-sanity tests (for instance two
    identical seeds giving zero empirical variance).
    """
    if paths < 2:
        raise ValueError(f"need at least 2 paths, got {paths}")
    if seeds is None:
        seeds = [derive_path_seed(base_seed, i) for i in range(paths)]
    elif len(seeds) != paths:
        raise ValueError(f"{len(seeds)} seeds supplied for {paths} paths")
    factor = psd_sqrt(cov0)
    moments, _, _, _ = _propagate(
        sys, gains, mean0, factor, list(seeds), substeps_per_node, record_paths=False
    )
    return moments


@dataclass(frozen=True)
class CheckpointResidual:
    t: float
    mho_max_abs: float
    mho_max_z: float
    e_mean_norm: float
    e_mean_max_z: float
    P_rel_err: float
    T_rel_err: float


@dataclass(frozen=True)
class CrossMomentReport:
    """Per-checkpoint comparison of the ensemble against the ODE pipeline."""

    rows: tuple[CheckpointResidual, ...]
    mho_within_3se: int        # checkpoints whose x e' residual is within 3 sigma
    e_mean_within_3se: bool    # every checkpoint's mean error within 3 sigma
    max_P_rel_err: float
    max_T_rel_err: float


def _z_scores(mean: np.ndarray, se: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(mean) / se
    z = np.where(se > 0, z, np.where(np.abs(mean) > 0, np.inf, 0.0))
    return z


def _rel_err(estimate: np.ndarray, reference: np.ndarray) -> float:
    denom = float(np.linalg.norm(reference))
    diff = float(np.linalg.norm(estimate - reference))
    if denom == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / denom


def cross_moment_check(moments: SampleMoments, closedloop_sol, filter_sol,
                       checkpoints: int = 10) -> CrossMomentReport:
    """Compare empirical moments against P, T and the zero cross-correlation.

    Report-only: nothing raises on a statistical miss.  Checkpoints are
    evenly spaced grid nodes (first and last included).
    """
    if not np.array_equal(moments.times, filter_sol.times):
        raise GridMismatchError("ensemble and filter grids differ")
    if not np.array_equal(moments.times, closedloop_sol.times):
        raise GridMismatchError("ensemble and closed-loop grids differ")

    last = len(moments.times) - 1
    nodes = np.unique(np.round(np.linspace(0, last, checkpoints)).astype(int))

    e_mean = moments.e_mean()
    e_mean_se = moments.e_mean_se()
    e_second = moments.e_second()
    x_second = moments.x_second()
    mho_se = moments.cross_xe_se()

    rows = []
    mho_ok = 0
    e_ok = True
    for i in nodes:
        mho_z = _z_scores(moments.cross_xe[i], mho_se[i])
        e_z = _z_scores(e_mean[i], e_mean_se[i])
        row = CheckpointResidual(
            t=float(moments.times[i]),
            mho_max_abs=float(np.max(np.abs(moments.cross_xe[i]))),
            mho_max_z=float(np.max(mho_z)),
            e_mean_norm=float(np.linalg.norm(e_mean[i])),
            e_mean_max_z=float(np.max(e_z)),
            P_rel_err=_rel_err(e_second[i], filter_sol.P_full[i]),
            T_rel_err=_rel_err(x_second[i], closedloop_sol.T[i]),
        )
        rows.append(row)
        if row.mho_max_z <= 3.0:
            mho_ok += 1
        if row.e_mean_max_z > 3.0:
            e_ok = False

    return CrossMomentReport(
        rows=tuple(rows),
        mho_within_3se=mho_ok,
        e_mean_within_3se=e_ok,
        max_P_rel_err=max(r.P_rel_err for r in rows),
        max_T_rel_err=max(r.T_rel_err for r in rows),
    )
