"""Measurement-based LQG control and initial-point smoothing for linear
quantum memory models, at the level of first and second moments.

The pipeline: derive dynamics matrices from physical parameters (model),
solve the forward smoothing/filtering Riccati equation for the Kalman gain
schedule (filtering), solve the backward control Riccati equation for the
feedback gain schedule (control), propagate closed-loop moments and cost
functionals (closedloop), and verify everything against a classical
Gaussian surrogate simulation (montecarlo).
"""

from .closedloop import (
    ClosedLoopSolution,
    bellman_value,
    cost,
    decoherence_time,
    deviation,
    min_cost_identity,
    moment_rhs,
    pontryagin_hamiltonian,
    solve_closed_loop,
)
from .control import (
    ControlSolution,
    control_rhs_blocks,
    control_rhs_full,
    feedback_gain,
    solve_control,
)
from .errors import (
    DimensionError,
    DivergenceError,
    GridMismatchError,
    InvalidScenarioError,
    PipelineError,
    QmemctlError,
    ScenarioFormatError,
)
from .filtering import (
    FilterSolution,
    filter_rhs_blocks,
    filter_rhs_full,
    hamiltonian_matrix,
    kalman_gain,
    solve_filter,
)
from .model import (
    ScenarioSpec,
    SystemMatrices,
    ValidationReport,
    build_structure_matrices,
    derive_system_matrices,
    physical_realizability_residual,
    validate_spec,
)
from .montecarlo import (
    CrossMomentReport,
    GainSchedule,
    SampleMoments,
    SurrogatePath,
    SurrogateState,
    cross_moment_check,
    derive_path_seed,
    gain_schedule,
    psd_sqrt,
    sample_path,
    simulate_ensemble,
)
from .ode import TimeGrid, integrate_matrix_ode, sample_grid

__version__ = "0.1.0"
