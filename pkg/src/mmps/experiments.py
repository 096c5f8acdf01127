"""Experiment drivers: fixed-point construction, continuous-dependence
probe, convergence studies, and the CSV/snapshot plumbing they share.

All drivers are deterministic: the same configuration and seed produce
byte-identical outputs.
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .estimates import DiagnosticsRecord, record_fields, refinement_order
from .evolution import (
    StepConfig,
    StepError,
    Trajectory,
    manufactured_forcing,
    run_simulation,
    step_mhd_forced,
    step_w_transport,
)
from .fields import (
    FluidParams,
    GridSpec,
    MAC,
    NODE,
    ScalarField,
    State,
    VectorField,
    lq_norm,
)
from .recipes import initial_state, mms_state, mollify, perturbed_state
from .snapshots import write_snapshot

__all__ = [
    "ExperimentError",
    "grid_of",
    "params_of",
    "step_config_of",
    "build_initial_state",
    "write_diagnostics_csv",
    "read_diagnostics_csv",
    "simulate_run",
    "schauder_fixed_point",
    "uniqueness_probe",
    "convergence_study",
]


class ExperimentError(RuntimeError):
    """An experiment driver could not complete."""


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------


def grid_of(cfg: RunConfig, nx: int | None = None) -> GridSpec:
    n = cfg.nx if nx is None else nx
    return GridSpec(n, n, cfg.mode)


def params_of(cfg: RunConfig) -> FluidParams:
    return FluidParams(mu=cfg.mu, chi=cfg.chi, nu=cfg.nu)


def step_config_of(
    cfg: RunConfig,
    grid: GridSpec,
    dt: float | None = None,
    with_forcing: bool = True,
) -> StepConfig:
    forcing = None
    if with_forcing and cfg.forcing_recipe is not None:
        forcing = manufactured_forcing(cfg.forcing_recipe, params_of(cfg), grid)
    return StepConfig(
        dt=cfg.dt if dt is None else dt,
        scheme=cfg.scheme,
        advection=cfg.advection,
        cfl_limit=cfg.cfl_limit,
        forcing=forcing,
        snapshot_stride=cfg.stride,
    )


def build_initial_state(cfg: RunConfig, grid: GridSpec) -> State:
    return initial_state(cfg.recipe, grid, params_of(cfg), seed=cfg.seed)


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------


def write_diagnostics_csv(records: Sequence[DiagnosticsRecord], path: str | os.PathLike) -> None:
    """Header then one row per record, shortest round-trip decimals."""
    names = record_fields()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for record in records:
            writer.writerow(repr(getattr(record, name)) for name in names)


def read_diagnostics_csv(path: str | os.PathLike) -> tuple[DiagnosticsRecord, ...]:
    names = record_fields()
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != names:
            raise ExperimentError(f"{path}: unexpected diagnostics header {header}")
        for row in reader:
            if len(row) != len(names):
                raise ExperimentError(f"{path}: short diagnostics row {row}")
            out.append(DiagnosticsRecord(**{n: float(v) for n, v in zip(names, row)}))
    return tuple(out)


def simulate_run(cfg: RunConfig, out_dir: str | os.PathLike) -> Trajectory:
    """Run the configured simulation; write ``diagnostics.csv`` plus one
    ``snap_XXXXXX.mmps`` per stored snapshot under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = grid_of(cfg)
    params = params_of(cfg)
    init = build_initial_state(cfg, grid)
    step_cfg = step_config_of(cfg, grid)
    traj = run_simulation(init, cfg.t_end, step_cfg, params)
    write_diagnostics_csv(traj.records, out / "diagnostics.csv")
    for index, (_, state) in enumerate(traj.states):
        write_snapshot(state, out / f"snap_{index:06d}.mmps")
    return traj


# ---------------------------------------------------------------------------
# Fixed-point construction
# ---------------------------------------------------------------------------


def _x_norm_diff(a: Sequence[ScalarField], b: Sequence[ScalarField]) -> float:
    """Discrete C(0,T;L^4) distance: max over step times of the L^4 norm."""
    return max(
        lq_norm(ScalarField(fa.grid, NODE, fa.data - fb.data), 4.0)
        for fa, fb in zip(a, b)
    )


def _x_norm(a: Sequence[ScalarField]) -> float:
    return max(lq_norm(f, 4.0) for f in a)


def _apply_spin_map(
    f_slices: Sequence[ScalarField],
    init: State,
    steps: int,
    step_cfg: StepConfig,
    params: FluidParams,
    eps: float,
) -> list[ScalarField]:
    """One application of the iteration map: drive the velocity/magnetic
    system by the mollified spin iterate, then transport the spin field
    along the resulting velocity.  At a fixed point this reproduces the
    coupled stepper with a mollified body force."""
    u, b, w = init.u, init.b, init.w
    out = [w]
    for k in range(steps):
        f_eps = mollify(f_slices[k], eps)
        u_old = u
        u, b = step_mhd_forced(u_old, b, f_eps, step_cfg, params)
        w = step_w_transport(w, u_old, step_cfg, params)
        out.append(w)
    return out


def schauder_fixed_point(cfg: RunConfig) -> dict:
    """Iterate the mollified spin map to its fixed point.

    Starts from the constant-in-time extension of the initial spin field,
    iterates f -> (spin trajectory under velocity driven by mollified f)
    until the discrete max-in-time L^4 distance drops below the configured
    tolerance, and halves the horizon (up to 4 times) whenever the iteration
    fails to contract.  The report carries the iterate distances and their
    ratios, the fixed point's max-in-time L^4 size, and the L^2 gap at the
    final time against a fully coupled run from the same data.
    """
    grid = grid_of(cfg)
    params = params_of(cfg)
    init = build_initial_state(cfg, grid)
    eps = cfg.epsilon if cfg.epsilon is not None else 2.0 * grid.h
    base_cfg = step_config_of(cfg, grid, with_forcing=False)

    steps = int(round(cfg.t_end / base_cfg.dt))
    if steps < 1 or abs(steps * base_cfg.dt - cfg.t_end) > 1e-8 * cfg.t_end:
        raise ExperimentError(
            f"fixed-point horizon {cfg.t_end} must be a whole number of steps of dt={base_cfg.dt}"
        )
    halvings: list[float] = []
    attempt_reports: list[dict] = []
    for _attempt in range(5):
        horizon = steps * base_cfg.dt
        f_slices: list[ScalarField] = [init.w for _ in range(steps + 1)]
        diffs: list[float] = []
        ratios: list[float] = []
        iterate_norms: list[float] = [_x_norm(f_slices)]
        converged = False
        contraction_failed = False
        try:
            for _ in range(cfg.schauder_max_iterations):
                f_next = _apply_spin_map(f_slices, init, steps, base_cfg, params, eps)
                diff = _x_norm_diff(f_next, f_slices)
                diffs.append(diff)
                iterate_norms.append(_x_norm(f_next))
                f_slices = f_next
                if len(diffs) >= 2 and diffs[-2] > 0.0:
                    ratio = diffs[-1] / diffs[-2]
                    ratios.append(ratio)
                    if ratio >= 1.0:
                        contraction_failed = True
                        break
                if diff <= cfg.schauder_tol:
                    converged = True
                    break
        except StepError as exc:
            raise ExperimentError(f"fixed-point sub-solver failed: {exc}") from exc
        attempt_reports.append(
            {
                "t_end": horizon,
                "iterations": len(diffs),
                "diffs": diffs,
                "ratios": ratios,
                "iterate_x_norms": iterate_norms,
            }
        )
        if converged:
            coupled = run_simulation(init, horizon, base_cfg, params)
            if coupled.failure is not None:
                raise ExperimentError(f"coupled comparison run failed: {coupled.failure}")
            w_star = f_slices[-1]
            w_coupled = coupled.final_state.w
            gap = lq_norm(
                ScalarField(grid, NODE, w_star.data - w_coupled.data), 2.0
            )
            return {
                "converged": True,
                "t_end": horizon,
                "halvings": halvings,
                "iterations": len(diffs),
                "diffs": diffs,
                "ratios": ratios,
                "iterate_x_norms": iterate_norms,
                "wstar_x_norm": _x_norm(f_slices),
                "coupled_l2_gap": gap,
                "attempts": attempt_reports,
            }
        halvings.append(horizon)
        if steps == 1:
            break
        steps = max(1, steps // 2)
    return {
        "converged": False,
        "t_end": steps * base_cfg.dt,
        "halvings": halvings,
        "attempts": attempt_reports,
        "iterations": attempt_reports[-1]["iterations"],
        "diffs": attempt_reports[-1]["diffs"],
        "ratios": attempt_reports[-1]["ratios"],
        "iterate_x_norms": attempt_reports[-1]["iterate_x_norms"],
    }


# ---------------------------------------------------------------------------
# Continuous dependence
# ---------------------------------------------------------------------------


def _difference_series(a: Trajectory, b: Trajectory) -> tuple[list[float], list[float]]:
    times, values = [], []
    for (t1, s1), (t2, s2) in zip(a.states, b.states):
        if t1 != t2:
            raise ExperimentError("trajectories disagree on snapshot times")
        du = VectorField(s1.grid, MAC, s2.u.ux - s1.u.ux, s2.u.uy - s1.u.uy)
        dw = ScalarField(s1.grid, NODE, s2.w.data - s1.w.data)
        db = VectorField(s1.grid, MAC, s2.b.ux - s1.b.ux, s2.b.uy - s1.b.uy)
        times.append(t1)
        values.append(lq_norm(du, 2.0) ** 2 + lq_norm(dw, 2.0) ** 2 + lq_norm(db, 2.0) ** 2)
    return times, values


def _fit_log_rate(times: Sequence[float], values: Sequence[float]) -> float:
    pairs = [(t, v) for t, v in zip(times, values) if v > 0.0]
    if len(pairs) < 2:
        return 0.0
    ts = np.array([p[0] for p in pairs])
    logs = np.log(np.array([p[1] for p in pairs]))
    return float(np.polyfit(ts, logs, 1)[0])


def uniqueness_probe(cfg: RunConfig, delta: float) -> dict:
    """Continuous-dependence probe: evolve the configured data and the same
    data perturbed by ``delta`` times a fixed unit-norm smooth perturbation
    (and by ``delta/2``), and report the squared L^2 separation D(t), its
    fitted exponential rate, and the first-order scaling ratios
    D_delta / D_{delta/2} (which sit near 4 in the linear regime).

    ``delta = 0`` reports an identically zero separation, bit-exactly.
    """
    if delta < 0.0:
        raise ExperimentError(f"delta must be >= 0, got {delta}")
    grid = grid_of(cfg)
    params = params_of(cfg)
    init = build_initial_state(cfg, grid)
    step_cfg = step_config_of(cfg, grid)

    base = run_simulation(init, cfg.t_end, step_cfg, params)
    if base.failure is not None:
        raise ExperimentError(f"base run failed: {base.failure}")

    report: dict = {"delta": delta}
    series = {}
    for label, amount in (("delta", delta), ("half", 0.5 * delta)):
        pert = run_simulation(
            perturbed_state(init, amount), cfg.t_end, step_cfg, params
        )
        if pert.failure is not None:
            raise ExperimentError(f"perturbed run ({label}) failed: {pert.failure}")
        times, values = _difference_series(base, pert)
        series[label] = values
        report[f"d_{label}"] = values
        report[f"rate_{label}"] = _fit_log_rate(times, values)
        report.setdefault("times", times)
    ratios = [
        a / b if b > 0.0 else math.nan
        for a, b in zip(series["delta"], series["half"])
    ]
    report["ratios"] = ratios
    report["identically_zero"] = all(v == 0.0 for v in series["delta"])
    finite = [r for r in ratios if math.isfinite(r)]
    report["ratio_min"] = min(finite, default=math.nan)
    report["ratio_max"] = max(finite, default=math.nan)
    return report


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------


def _field_errors(state: State, exact: State) -> dict[str, float]:
    g = state.grid
    du = VectorField(g, MAC, state.u.ux - exact.u.ux, state.u.uy - exact.u.uy)
    dw = ScalarField(g, NODE, state.w.data - exact.w.data)
    db = VectorField(g, MAC, state.b.ux - exact.b.ux, state.b.uy - exact.b.uy)
    return {
        "u_l2": lq_norm(du, 2.0),
        "u_l4": lq_norm(du, 4.0),
        "w_l2": lq_norm(dw, 2.0),
        "w_l4": lq_norm(dw, 4.0),
        "b_l2": lq_norm(db, 2.0),
        "b_l4": lq_norm(db, 4.0),
    }


_ERROR_KEYS = ("u_l2", "u_l4", "w_l2", "w_l4", "b_l2", "b_l4")


def _order_table(errors: list[dict[str, float]], factor: float) -> dict[str, float]:
    out = {}
    for key in _ERROR_KEYS:
        values = [e[key] for e in errors]
        out[key] = refinement_order(values, refine_factor=factor)
    return out


def convergence_study(cfg: RunConfig) -> dict:
    """Manufactured-solution convergence orders.

    Spatial: the configured grid ladder at the configured (small, fixed) dt,
    errors against the analytic solution at the final time.  Temporal: the
    configured dt ladder on the configured grid, self-convergence against a
    reference run at one-eighth the smallest dt.  Reports L^2 and L^4 error
    tables and fitted orders per field.
    """
    if cfg.forcing_recipe is None:
        raise ExperimentError("convergence study needs forcing.recipe (an MMS recipe)")
    if len(cfg.spatial_grids) < 3:
        raise ExperimentError("convergence ladder too short: need >= 3 spatial grids")
    recipe = cfg.forcing_recipe
    params = params_of(cfg)

    spatial_errors: list[dict[str, float]] = []
    for nx in cfg.spatial_grids:
        grid = grid_of(cfg, nx)
        init = mms_state(recipe, 0.0, grid, params)
        step_cfg = step_config_of(cfg, grid)
        traj = run_simulation(init, cfg.t_end, step_cfg, params)
        if traj.failure is not None:
            raise ExperimentError(f"spatial run nx={nx} failed: {traj.failure}")
        exact = mms_state(recipe, cfg.t_end, grid, params)
        spatial_errors.append(_field_errors(traj.final_state, exact))

    grid = grid_of(cfg)
    init = mms_state(recipe, 0.0, grid, params)
    dts = sorted(cfg.temporal_dts, reverse=True)
    factor = dts[0] / dts[1]
    if any(abs(a / b - factor) > 1e-9 * factor for a, b in zip(dts[1:], dts[2:])):
        raise ExperimentError("temporal dt ladder must refine by a fixed factor")
    dt_ref = min(dts) / 8.0
    ref_cfg = step_config_of(cfg, grid, dt=dt_ref)
    ref = run_simulation(init, cfg.t_end, ref_cfg, params)
    if ref.failure is not None:
        raise ExperimentError(f"temporal reference run failed: {ref.failure}")
    temporal_errors: list[dict[str, float]] = []
    for dt in dts:
        step_cfg = step_config_of(cfg, grid, dt=dt)
        traj = run_simulation(init, cfg.t_end, step_cfg, params)
        if traj.failure is not None:
            raise ExperimentError(f"temporal run dt={dt} failed: {traj.failure}")
        temporal_errors.append(_field_errors(traj.final_state, ref.final_state))

    report = {
        "spatial": {
            "grids": list(cfg.spatial_grids),
            "errors": spatial_errors,
            "orders": _order_table(spatial_errors, 2.0),
        },
        "temporal": {
            "grid": cfg.nx,
            "dts": dts,
            "errors": temporal_errors,
            "orders": _order_table(temporal_errors, factor),
        },
    }
    l2_spatial = [report["spatial"]["orders"][k] for k in ("u_l2", "w_l2", "b_l2")]
    l2_temporal = [report["temporal"]["orders"][k] for k in ("u_l2", "w_l2", "b_l2")]
    report["passes"] = bool(
        all(o >= 1.8 for o in l2_spatial) and all(o >= 0.9 for o in l2_temporal)
    )
    return report
