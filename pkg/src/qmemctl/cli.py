"""Scenario ingestion, pipeline orchestration and artifact emission.

Commands (one per invocation):

    validate     check the scenario and print the validation report
    filter       solve the smoothing/filtering Riccati, write filter.csv
    control      solve the control Riccati, write control.csv
    simulate     propagate closed-loop moments, write closedloop.csv
    montecarlo   run the sampling oracle, write montecarlo.csv + summary.json
    decoherence  evaluate the running cost threshold crossing, write summary.json
    full         everything above, one CSV per stage plus summary.json

Scenario files are JSON with matrices as row-major nested (or flat) arrays;
see README for the schema.  Numbers are emitted with 17 significant digits,
so reruns with identical configuration produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import closedloop, control, filtering, model, montecarlo
from .errors import PipelineError, QmemctlError, ScenarioFormatError

DEFAULT_PATHS = 10_000
DEFAULT_SEED = 1_234_567
DEFAULT_EPSILON = 0.1
DEFAULT_SUBSTEPS = 4
STEPS_PER_TIME_UNIT = 2000

COST_IDENTITY_RTOL = 1e-6
MC_P_REL_LIMIT = 0.05
MC_CHECKPOINTS = 10

COMMANDS = ("validate", "filter", "control", "simulate", "montecarlo", "decoherence", "full")


@dataclass(frozen=True)
class RunConfig:
    command: str
    scenario: Path
    out: Path
    steps: int | None = None
    paths: int | None = None
    seed: int | None = None
    epsilon: float | None = None
    phi_star: float | None = None
    write_moments: bool = False


# ---------------------------------------------------------------------------
# scenario loading


def _field_matrix(name: str, raw, rows: int, cols: int) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"field '{name}': not a numeric array ({exc})") from None
    if arr.ndim == 1:
        if arr.size != rows * cols:
            raise ScenarioFormatError(
                f"field '{name}': expected {rows}x{cols} ({rows * cols} numbers), "
                f"got {arr.size} numbers"
            )
        arr = arr.reshape(rows, cols)
    elif arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise ScenarioFormatError(
                f"field '{name}': expected shape {(rows, cols)}, got {arr.shape}"
            )
    else:
        raise ScenarioFormatError(f"field '{name}': expected a matrix, got ndim={arr.ndim}")
    return arr


def _field_vector(name: str, raw, size: int) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"field '{name}': not a numeric array ({exc})") from None
    if arr.size != size:
        raise ScenarioFormatError(f"field '{name}': expected {size} numbers, got {arr.size}")
    return arr


def _field_int(name: str, raw) -> int:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or int(raw) != raw:
        raise ScenarioFormatError(f"field '{name}': expected an integer, got {raw!r}")
    return int(raw)


_KNOWN_KEYS = {
    "n", "m", "d", "r", "s", "R", "M", "N", "D", "F", "Pi",
    "mean0", "cov0", "tau", "steps",
}


def load_scenario(path) -> model.ScenarioSpec:
    """Load and normalize a scenario JSON file.

    Applies documented defaults: mean0 = 0, cov0 = I/2, steps = 2000 per
    unit of tau (rounded up).  d, r, s are inferred from N, D, F when not
    given and cross-checked when they are.  Raises ScenarioFormatError with
    field context for anything malformed.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFormatError(f"cannot read scenario file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"scenario {path} is not valid JSON (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}"
        ) from None
    if not isinstance(data, dict):
        raise ScenarioFormatError(f"scenario {path}: top level must be an object")

    unknown = sorted(set(data) - _KNOWN_KEYS)
    if unknown:
        raise ScenarioFormatError(f"scenario {path}: unknown fields {unknown}")

    for required in ("n", "m", "R", "M", "D", "F", "tau"):
        if required not in data:
            raise ScenarioFormatError(f"missing required field '{required}'")

    n = _field_int("n", data["n"])
    m = _field_int("m", data["m"])
    if n <= 0 or m <= 0:
        raise ScenarioFormatError(f"fields 'n'/'m' must be positive, got n={n}, m={m}")

    tau = float(data["tau"])
    if not tau > 0:
        raise ScenarioFormatError(f"field 'tau': must be positive, got {tau}")

    if "N" in data:
        n_raw = np.asarray(data["N"], dtype=float)
        d = n_raw.shape[0] if n_raw.ndim == 2 else (0 if n_raw.size == 0 else 1)
    else:
        d = 0
    if "d" in data:
        d_declared = _field_int("d", data["d"])
        if "N" not in data and d_declared > 0:
            raise ScenarioFormatError("missing required field 'N' (d >= 1 declared)")
        if "N" in data and d_declared != d:
            raise ScenarioFormatError(
                f"field 'N': has {d} rows but field 'd' declares {d_declared}"
            )
        d = d_declared

    d_raw = np.asarray(data["D"], dtype=float)
    r = d_raw.shape[0] if d_raw.ndim == 2 else (1 if d_raw.size else 0)
    if "r" in data and _field_int("r", data["r"]) != r:
        raise ScenarioFormatError(f"field 'D': has {r} rows but field 'r' declares {data['r']}")

    f_raw = np.asarray(data["F"], dtype=float)
    s = f_raw.shape[0] if f_raw.ndim == 2 else (1 if f_raw.size else 0)
    if "s" in data and _field_int("s", data["s"]) != s:
        raise ScenarioFormatError(f"field 'F': has {s} rows but field 's' declares {data['s']}")

    if d > 0 and "Pi" not in data:
        raise ScenarioFormatError("missing required field 'Pi' (d >= 1)")

    spec = model.ScenarioSpec(
        n=n, m=m, d=d, r=r, s=s,
        R=_field_matrix("R", data["R"], n, n),
        M=_field_matrix("M", data["M"], m, n),
        N=_field_matrix("N", data["N"], d, n) if d > 0 else np.zeros((0, n)),
        D=_field_matrix("D", data["D"], r, m),
        F=_field_matrix("F", data["F"], s, n),
        Pi=_field_matrix("Pi", data["Pi"], d, d) if d > 0 else np.zeros((0, 0)),
        mean0=_field_vector("mean0", data["mean0"], n) if "mean0" in data else np.zeros(n),
        cov0=_field_matrix("cov0", data["cov0"], n, n) if "cov0" in data else 0.5 * np.eye(n),
        tau=tau,
        steps=_field_int("steps", data["steps"]) if "steps" in data
        else int(math.ceil(STEPS_PER_TIME_UNIT * tau)),
    )
    return spec


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _matrix_columns(label: str, rows: int, cols: int) -> list[str]:
    return [f"{label}_{i}_{j}" for i in range(rows) for j in range(cols)]


def _write_filter_csv(path: Path, filt: filtering.FilterSolution) -> None:
    n = filt.P1.shape[1]
    r = filt.K.shape[2]
    header = (
        ["t"]
        + _matrix_columns("P1", n, n)
        + _matrix_columns("P2", n, n)
        + _matrix_columns("P3", n, n)
        + _matrix_columns("K", 2 * n, r)
    )
    rows = (
        np.concatenate(
            [
                filt.times[:, None],
                filt.P1.reshape(len(filt.times), -1),
                filt.P2.reshape(len(filt.times), -1),
                filt.P3.reshape(len(filt.times), -1),
                filt.K.reshape(len(filt.times), -1),
            ],
            axis=1,
        )
    )
    _write_csv(path, header, rows)


def _write_control_csv(path: Path, ctrl: control.ControlSolution) -> None:
    n = ctrl.Q1.shape[1]
    d = ctrl.c.shape[1]
    header = (
        ["t"]
        + _matrix_columns("Q1", n, n)
        + _matrix_columns("Q2", n, n)
        + _matrix_columns("Q3", n, n)
        + _matrix_columns("c", d, 2 * n)
    )
    rows = np.concatenate(
        [
            ctrl.times[:, None],
            ctrl.Q1.reshape(len(ctrl.times), -1),
            ctrl.Q2.reshape(len(ctrl.times), -1),
            ctrl.Q3.reshape(len(ctrl.times), -1),
            ctrl.c.reshape(len(ctrl.times), -1),
        ],
        axis=1,
    )
    _write_csv(path, header, rows)


def _write_closedloop_csv(path: Path, closed: closedloop.ClosedLoopSolution,
                          write_moments: bool) -> None:
    header = ["t", "Delta", "Phi", "H_pont"]
    columns = [closed.times[:, None], closed.Delta[:, None], closed.Phi[:, None],
               closed.H_pont[:, None]]
    if write_moments:
        twon = closed.T.shape[1]
        header += _matrix_columns("T", twon, twon)
        columns.append(closed.T.reshape(len(closed.times), -1))
    _write_csv(path, header, np.concatenate(columns, axis=1))


def _write_montecarlo_csv(path: Path, report: montecarlo.CrossMomentReport) -> None:
    header = ["t", "mho_max_abs", "mho_max_z", "e_mean_norm", "e_mean_max_z",
              "P_rel_err", "T_rel_err"]
    rows = [
        [row.t, row.mho_max_abs, row.mho_max_z, row.e_mean_norm, row.e_mean_max_z,
         row.P_rel_err, row.T_rel_err]
        for row in report.rows
    ]
    _write_csv(path, header, rows)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_summary(path: Path, summary: dict) -> None:
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# pipeline


def default_phi_star(sys: model.SystemMatrices, spec: model.ScenarioSpec) -> float:
    """Reference cost scale <Lambda, P(0) + T(0)> + 1."""
    p0 = np.tile(spec.cov0, (2, 2))
    t0 = np.kron(np.ones((2, 2)), np.outer(spec.mean0, spec.mean0))
    return float(np.sum(sys.Lambda * (p0 + t0))) + 1.0


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except QmemctlError:
        raise
    except Exception as exc:
        raise PipelineError(f"stage '{name}' failed: {exc}") from exc


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit status.

    Nonzero exactly when a hard error occurs, the scenario is invalid, or an
    error-level numerical check fails (cost identity, Hamiltonian constancy,
    Monte Carlo agreement).
    """
    spec = _stage("load", load_scenario, config.scenario)
    if config.steps is not None:
        spec = replace(spec, steps=config.steps)

    if config.command == "validate":
        report = model.validate_spec(spec)
        print(json.dumps(_jsonable({
            "valid": report.ok,
            "violations": [
                {"invariant": v.invariant, "detail": v.detail, "residual": v.residual}
                for v in report.violations
            ],
        }), indent=2, sort_keys=True))
        return 0 if report.ok else 1

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    sys_m = _stage("model", model.derive_system_matrices, spec)
    filt = _stage("filter", filtering.solve_filter, sys_m, spec.cov0, spec.tau, spec.steps)
    if config.command == "filter":
        _write_filter_csv(out / "filter.csv", filt)
        print(f"wrote {out / 'filter.csv'}")
        return 0

    ctrl = _stage("control", control.solve_control, sys_m, spec.Pi, spec.tau, spec.steps)
    if config.command == "control":
        _write_control_csv(out / "control.csv", ctrl)
        print(f"wrote {out / 'control.csv'}")
        return 0

    closed = _stage("closedloop", closedloop.solve_closed_loop,
                    sys_m, filt, ctrl, spec.mean0, spec.tau)
    if config.command == "simulate":
        _write_closedloop_csv(out / "closedloop.csv", closed, config.write_moments)
        print(f"wrote {out / 'closedloop.csv'}")
        return 0

    phi_tau = float(closed.Phi[-1])
    t0_matrix = np.kron(np.ones((2, 2)), np.outer(spec.mean0, spec.mean0))
    identity = _stage("identity", closedloop.min_cost_identity,
                      filt, ctrl, t0_matrix, sys_m.Lambda, sys_m.G)
    identity_residual = abs(phi_tau - identity) / (1.0 + abs(phi_tau))
    h_mean = float(closed.H_pont.mean())
    h_variation = float(np.max(np.abs(closed.H_pont - h_mean)) / (1.0 + abs(h_mean)))

    epsilon = DEFAULT_EPSILON if config.epsilon is None else config.epsilon
    phi_star = default_phi_star(sys_m, spec) if config.phi_star is None else config.phi_star
    tau_dec = _stage("decoherence", closedloop.decoherence_time,
                     closed.times, closed.Phi, epsilon, phi_star)

    # The Pontryagin trace is reported but not gated: its time variation is
    # structural (the Kalman-gain forcing K(t) G K(t)' is time-dependent), so
    # a threshold on it would fail every healthy run.  The identity residual
    # is pure quadrature error, O(h^2); the gate is pinned at 1e-6 for the
    # default grid density and relaxes quadratically on coarser grids.
    default_steps = int(math.ceil(STEPS_PER_TIME_UNIT * spec.tau))
    identity_limit = COST_IDENTITY_RTOL * max(1.0, (default_steps / spec.steps) ** 2)
    checks = {
        "cost_identity": {
            "passed": bool(identity_residual <= identity_limit),
            "value": identity_residual,
            "limit": identity_limit,
        },
    }

    summary = {
        "scenario": {
            "n": spec.n, "m": spec.m, "d": spec.d, "r": spec.r, "s": spec.s,
            "tau": spec.tau, "steps": spec.steps,
        },
        "cost": {
            "delta_tau": float(closed.Delta[-1]),
            "phi_tau": phi_tau,
            "control_energy": float(phi_tau - closed.Delta[-1]),
            "min_cost_identity": identity,
            "identity_rel_residual": identity_residual,
        },
        "pontryagin": {"mean": h_mean, "rel_variation": h_variation},
        "decoherence": {
            "epsilon": epsilon,
            "phi_star": phi_star,
            "threshold": epsilon * phi_star,
            "time": tau_dec,
            "reached": tau_dec is not None,
            "note": None if tau_dec is not None else "not reached within horizon",
        },
    }

    if config.command in ("montecarlo", "full"):
        paths = DEFAULT_PATHS if config.paths is None else config.paths
        seed = DEFAULT_SEED if config.seed is None else config.seed
        gains = montecarlo.gain_schedule(filt, ctrl)
        moments = _stage("montecarlo", montecarlo.simulate_ensemble,
                         sys_m, gains, spec.mean0, spec.cov0, paths, seed,
                         DEFAULT_SUBSTEPS)
        report = _stage("montecarlo", montecarlo.cross_moment_check,
                        moments, closed, filt, MC_CHECKPOINTS)
        delta_ode = float(closed.Delta[-1])
        delta_z = (
            abs(moments.deviation_mean - delta_ode) / moments.deviation_se
            if moments.deviation_se > 0 else 0.0
        )
        summary["montecarlo"] = {
            "paths": paths,
            "base_seed": seed,
            "substeps_per_node": DEFAULT_SUBSTEPS,
            "delta_mc": moments.deviation_mean,
            "delta_se": moments.deviation_se,
            "delta_ode": delta_ode,
            "delta_z": delta_z,
            "cost_mc": moments.cost_mean,
            "cost_se": moments.cost_se,
            "smoothing_sqerr_mc": moments.smoothing_sqerr_mean,
            "smoothing_sqerr_ode": float(np.trace(filt.P1[-1])),
            "max_P_rel_err": report.max_P_rel_err,
            "max_T_rel_err": report.max_T_rel_err,
            "mho_checkpoints_within_3se": report.mho_within_3se,
            "checkpoints": len(report.rows),
            "e_mean_within_3se": report.e_mean_within_3se,
        }
        checks["mc_delta_within_3se"] = {
            "passed": bool(delta_z <= 3.0), "value": delta_z, "limit": 3.0,
        }
        checks["mc_P_relative_error"] = {
            "passed": bool(report.max_P_rel_err <= MC_P_REL_LIMIT),
            "value": report.max_P_rel_err, "limit": MC_P_REL_LIMIT,
        }
        checks["mc_mho_checkpoints"] = {
            "passed": bool(report.mho_within_3se >= len(report.rows) - 1),
            "value": report.mho_within_3se,
            "limit": len(report.rows) - 1,
        }
        checks["mc_e_mean"] = {
            "passed": bool(report.e_mean_within_3se),
            "value": report.e_mean_within_3se, "limit": True,
        }
        _write_montecarlo_csv(out / "montecarlo.csv", report)

    summary["checks"] = checks

    if config.command == "full":
        _write_filter_csv(out / "filter.csv", filt)
        _write_control_csv(out / "control.csv", ctrl)
        _write_closedloop_csv(out / "closedloop.csv", closed, config.write_moments)

    _write_summary(out / "summary.json", summary)

    print(f"Phi(tau) = {_fmt(phi_tau)}, min-cost identity residual = {_fmt(identity_residual)}")
    if tau_dec is None:
        print("decoherence threshold not reached within horizon")
    else:
        print(f"decoherence time = {_fmt(tau_dec)}")
    failed = sorted(name for name, chk in checks.items() if not chk["passed"])
    if failed:
        print(f"FAILED checks: {', '.join(failed)}")
    print(f"wrote {out / 'summary.json'}")
    return 0 if not failed else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmemctl",
        description="Moment-level LQG control and initial-point smoothing pipeline "
                    "for linear quantum memory models.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--out", default=".", help="output directory (default: .)")
    parser.add_argument("--steps", type=int, default=None, help="override grid steps")
    parser.add_argument("--paths", type=int, default=None,
                        help=f"Monte Carlo paths (default {DEFAULT_PATHS})")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"Monte Carlo base seed (default {DEFAULT_SEED})")
    parser.add_argument("--epsilon", type=float, default=None,
                        help=f"decoherence fidelity parameter (default {DEFAULT_EPSILON})")
    parser.add_argument("--phi-star", type=float, default=None,
                        help="decoherence reference scale (default <Lambda,P0+T0>+1)")
    parser.add_argument("--moments", action="store_true",
                        help="include vec(T) columns in closedloop.csv")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    config = RunConfig(
        command=args.command,
        scenario=Path(args.scenario),
        out=Path(args.out),
        steps=args.steps,
        paths=args.paths,
        seed=args.seed,
        epsilon=args.epsilon,
        phi_star=args.phi_star,
        write_moments=args.moments,
    )
    try:
        return run(config)
    except QmemctlError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
