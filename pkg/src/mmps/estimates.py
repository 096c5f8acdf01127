"""Runtime ledgers and audits for the solver's inequality ladder.

Every audit is a pure function of a trajectory (plus parameters): auditing
twice yields identical ledgers.  The discrete conventions mirror the scheme:

* gradients/Hessians come from the one-sided/mirror derivative-sample sets of
  :mod:`mmps.fields`, so the energy pairing ``<laplacian(u), u>`` equals
  ``-||grad u||^2`` exactly for wall-pinned fields;
* the scalar curl and the rotated gradient are exact transposes under the
  trapezoid/face quadratures, so the coupling term ``2 chi <curl2(u), w>``
  is the single exact exchange term of the energy balance;
* time derivatives are realized as step differences divided by dt; time
  integrals are left-endpoint sums over steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dataclass_fields
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .fields import (
    CELL,
    MAC,
    NODE,
    FluidParams,
    GridSpec,
    ScalarField,
    State,
    VectorField,
    curl2,
    grad,
    gradient_samples,
    hessian_samples,
    l2_inner,
    lattice_weights,
    lq_norm,
    max_abs,
    samples_lq,
    third_derivative_samples,
)
from .stokes import probe_scalar

if TYPE_CHECKING:  # pragma: no cover - import cycle guard (evolution imports us)
    from .evolution import Trajectory

__all__ = [
    "EstimateError",
    "DiagnosticsRecord",
    "EstimateLedger",
    "diagnostics_record",
    "record_fields",
    "z_field",
    "energy_audit",
    "w_lq_audit",
    "gronwall_budget",
    "tweighted_h2_audit",
    "gn_probe",
    "gn_ratios",
    "weak_form_residual",
    "z_diagnostic",
    "refinement_stable",
    "refinement_order",
]


class EstimateError(ValueError):
    """Audit precondition violated (non-uniform dt, bad q, short trajectory)."""


# ---------------------------------------------------------------------------
# Per-step diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One step's worth of monitored norms and signed balances.

    Field order is the canonical column order of every CSV this package
    writes.  ``energy_residual`` and ``lq_margin`` are signed; everything
    else is a norm (>= 0).  ``lq_margin`` is recorded at q = 4.
    """

    t: float
    u_l2: float
    grad_u_l2: float
    w_l2: float
    w_l4: float
    grad_w_l4: float
    b_l2: float
    grad_b_l2: float
    hess_u_l2: float
    hess_b_l2: float
    hess_u_l4: float
    dt_w_l2: float
    dt_w_l4: float
    energy_residual: float
    lq_margin: float
    z_l2: float

    def __post_init__(self) -> None:
        for f in dataclass_fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise EstimateError(f"diagnostics entry {f.name} is not finite")
            if f.name not in ("t", "energy_residual", "lq_margin") and value < 0.0:
                raise EstimateError(f"diagnostics norm {f.name} is negative")


def record_fields() -> tuple[str, ...]:
    """Column names in declaration order (the CSV header)."""
    return tuple(f.name for f in dataclass_fields(DiagnosticsRecord))


def _energy(record: DiagnosticsRecord) -> float:
    return record.u_l2**2 + record.w_l2**2 + record.b_l2**2


def z_field(state: State, params: FluidParams) -> ScalarField:
    """Combined node scalar curl2(u) - chi/(mu+chi) * w."""
    zc = curl2(state.u)
    ratio = params.chi / (params.mu + params.chi)
    return ScalarField(state.grid, NODE, zc.data - ratio * state.w.data)


def diagnostics_record(
    state: State,
    params: FluidParams,
    prev: State | None = None,
    prev_record: DiagnosticsRecord | None = None,
    forcing_work: float = 0.0,
    q: float = 4.0,
) -> DiagnosticsRecord:
    """Measure one state (optionally against its predecessor).

    With ``prev`` given, the step differences feed ``dt_w_*``, the energy
    residual and the L^q margin; without it those entries are 0.  The energy
    residual is the defect of

        (E_k - E_{k-1}) / (2 dt) + (mu+chi) ||grad u||^2 + 2 chi ||w||^2
        + nu ||grad b||^2 - 2 chi <curl2(u), w> - forcing_work

    with all spatial terms at the new state; ``forcing_work`` is the power
    input of any external forcing so forced runs stay comparably balanced.
    The margin is the L^4 ledger's rhs - lhs (see :func:`w_lq_audit`).
    """
    u, w, b = state.u, state.w, state.b
    u_l2 = lq_norm(u, 2.0)
    grad_u = gradient_samples(u)
    grad_u_l2 = samples_lq(grad_u, 2.0)
    w_l2 = lq_norm(w, 2.0)
    w_l4 = lq_norm(w, 4.0)
    grad_w_l4 = samples_lq(gradient_samples(w), 4.0)
    b_l2 = lq_norm(b, 2.0)
    grad_b_l2 = samples_lq(gradient_samples(b), 2.0)
    hess_u = hessian_samples(u)
    hess_u_l2 = samples_lq(hess_u, 2.0)
    hess_b_l2 = samples_lq(hessian_samples(b), 2.0)
    hess_u_l4 = samples_lq(hess_u, 4.0)
    z_l2 = lq_norm(z_field(state, params), 2.0)

    dt_w_l2 = dt_w_l4 = 0.0
    energy_residual = 0.0
    lq_margin = 0.0
    if prev is not None:
        dt = state.t - prev.t
        if dt <= 0.0:
            raise EstimateError("states are not ordered in time")
        dw = ScalarField(state.grid, NODE, (w.data - prev.w.data) / dt)
        dt_w_l2 = lq_norm(dw, 2.0)
        dt_w_l4 = lq_norm(dw, 4.0)
        if prev_record is not None:
            e_prev = _energy(prev_record)
            w_prev_l4 = prev_record.w_l4
        else:
            e_prev = lq_norm(prev.u, 2.0) ** 2 + lq_norm(prev.w, 2.0) ** 2 + lq_norm(prev.b, 2.0) ** 2
            w_prev_l4 = lq_norm(prev.w, 4.0)
        e_new = u_l2**2 + w_l2**2 + b_l2**2
        coupling = l2_inner(curl2(u), w)
        mu_chi = params.mu + params.chi
        energy_residual = (
            0.5 * (e_new - e_prev) / dt
            + mu_chi * grad_u_l2**2
            + 2.0 * params.chi * w_l2**2
            + params.nu * grad_b_l2**2
            - 2.0 * params.chi * coupling
            - forcing_work
        )
        grad_u_lq = samples_lq(grad_u, q)
        w_lq = lq_norm(w, q)
        w_prev_lq = w_prev_l4 if q == 4.0 else lq_norm(prev.w, q)
        lhs = (w_lq**q - w_prev_lq**q) / (q * dt) + 2.0 * params.chi * w_lq**q
        lq_margin = params.chi * grad_u_lq * w_lq ** (q - 1.0) - lhs

    return DiagnosticsRecord(
        t=state.t,
        u_l2=u_l2,
        grad_u_l2=grad_u_l2,
        w_l2=w_l2,
        w_l4=w_l4,
        grad_w_l4=grad_w_l4,
        b_l2=b_l2,
        grad_b_l2=grad_b_l2,
        hess_u_l2=hess_u_l2,
        hess_b_l2=hess_b_l2,
        hess_u_l4=hess_u_l4,
        dt_w_l2=dt_w_l2,
        dt_w_l4=dt_w_l4,
        energy_residual=energy_residual,
        lq_margin=lq_margin,
        z_l2=z_l2,
    )


# ---------------------------------------------------------------------------
# Ledger container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateLedger:
    """Per-step left/right-hand series with margins, plus summary scalars.

    ``series`` always carries at least "lhs", "rhs" and "margin"; every
    series has exactly one entry per audited step.
    """

    name: str
    times: tuple[float, ...]
    series: dict[str, tuple[float, ...]]
    summary: dict[str, float]

    def __post_init__(self) -> None:
        for key in ("lhs", "rhs", "margin"):
            if key not in self.series:
                raise EstimateError(f"ledger {self.name} lacks series {key!r}")
        for key, values in self.series.items():
            if len(values) != len(self.times):
                raise EstimateError(
                    f"ledger {self.name} series {key!r} length {len(values)} "
                    f"!= {len(self.times)} times"
                )


def _uniform_dt(times: Sequence[float]) -> float:
    if len(times) < 2:
        raise EstimateError("audit needs at least one step")
    dts = np.diff(np.asarray(times))
    dt = float(dts[0])
    if dt <= 0.0 or np.max(np.abs(dts - dt)) > 1e-9 * max(dt, 1e-30):
        raise EstimateError("audit requires a uniform time step")
    return dt


# ---------------------------------------------------------------------------
# Energy balance audit
# ---------------------------------------------------------------------------


def energy_audit(traj: "Trajectory", params: FluidParams) -> EstimateLedger:
    """Per-step energy-balance residuals plus the damping-dominated envelope.

    The residual series is read off the per-step records.  The envelope
    check feeds the measured residual back into the one-step recursion

        E_k <= (1 + c dt) E_{k-1} + 2 dt |residual_k|,
        c = 8 chi^2 / (mu + chi),

    which discretely dominates the coupling term after Young's inequality
    (the exchange term satisfies 2 chi <curl2 u, w> <= (mu+chi) ||grad u||^2
    + 2 chi^2/(mu+chi) ||w||^2, and the w-damping absorbs the rest).  The
    envelope is only meaningful for unforced runs; with a forcing handle
    configured it is reported as skipped.
    """
    records = traj.records
    times = tuple(r.t for r in records)
    dt = _uniform_dt(times)
    energies = [_energy(r) for r in records]
    residuals = [r.energy_residual for r in records[1:]]
    c = 8.0 * params.chi**2 / (params.mu + params.chi)
    atol = 1e-12 * max(energies[0], 1.0)
    forced = getattr(traj.cfg, "forcing", None) is not None

    lhs, rhs, margin = [], [], []
    for k in range(1, len(records)):
        bound = (1.0 + c * dt) * energies[k - 1] + 2.0 * dt * abs(residuals[k - 1]) + atol
        lhs.append(energies[k])
        rhs.append(bound)
        margin.append(bound - energies[k])
    envelope_ok = (not forced) and all(m >= 0.0 for m in margin)

    dissipation = 0.0
    for r in records[1:]:
        dissipation += 2.0 * dt * (
            (params.mu + params.chi) * r.grad_u_l2**2
            + 2.0 * params.chi * r.w_l2**2
            + params.nu * r.grad_b_l2**2
        )

    return EstimateLedger(
        name="energy-balance",
        times=times[1:],
        series={
            "lhs": tuple(lhs),
            "rhs": tuple(rhs),
            "margin": tuple(margin),
            "residual": tuple(residuals),
        },
        summary={
            "max_abs_residual": max((abs(r) for r in residuals), default=0.0),
            "sup_energy": max(energies),
            "dissipation_integral": dissipation,
            "envelope_constant": c,
            "envelope_checked": 0.0 if forced else 1.0,
            "envelope_ok": 1.0 if envelope_ok else 0.0,
        },
    )


# ---------------------------------------------------------------------------
# L^q ledger for the micro-rotation field
# ---------------------------------------------------------------------------


def w_lq_audit(traj: "Trajectory", q: float, params: FluidParams) -> EstimateLedger:
    """Discrete differential inequality for ||w||_{L^q}.

    Per step k the ledger tests

        (||w_k||_q^q - ||w_{k-1}||_q^q) / (q dt) + 2 chi ||w_k||_q^q
            <= chi ||grad u_k||_{L^q} ||w_k||_q^{q-1} + scheme_slack_k

    where ``scheme_slack_k`` is the measured L^q production rate of the
    advection sub-step alone (re-applied to the stored states); for the
    upwind scheme it is dissipative (<= 0).  Margins are rhs - lhs.
    """
    if q < 2.0 or not math.isfinite(q):
        raise EstimateError(f"lq audit needs q in [2, inf), got {q}")
    from .evolution import advect_node  # deferred: evolution imports us

    states = traj.states
    records = traj.records
    if len(states) != len(records):
        raise EstimateError("lq audit needs per-step snapshots (stride 1)")
    times = tuple(r.t for r in records)
    dt = _uniform_dt(times)
    chi = params.chi

    lhs, rhs, margin, slack_series = [], [], [], []
    for k in range(1, len(states)):
        s_prev, s_new = states[k - 1][1], states[k][1]
        wq_prev = lq_norm(s_prev.w, q)
        wq_new = lq_norm(s_new.w, q)
        left = (wq_new**q - wq_prev**q) / (q * dt) + 2.0 * chi * wq_new**q
        gu_q = samples_lq(gradient_samples(s_new.u), q)
        adv = advect_node(s_prev.u, s_prev.w, traj.cfg.advection)
        transported = ScalarField(s_prev.grid, NODE, s_prev.w.data - dt * adv.data)
        slack = (lq_norm(transported, q) ** q - wq_prev**q) / (q * dt)
        right = chi * gu_q * wq_new ** (q - 1.0) + slack
        lhs.append(left)
        rhs.append(right)
        slack_series.append(slack)
        margin.append(right - left)

    return EstimateLedger(
        name=f"w-l{q:g}-ledger",
        times=times[1:],
        series={
            "lhs": tuple(lhs),
            "rhs": tuple(rhs),
            "margin": tuple(margin),
            "scheme_slack": tuple(slack_series),
        },
        summary={
            "q": q,
            "min_margin": min(margin, default=0.0),
            "max_scheme_slack": max(slack_series, default=0.0),
        },
    )


# ---------------------------------------------------------------------------
# Integral budget (the global a priori display)
# ---------------------------------------------------------------------------


def _vector_diff(a: VectorField, b: VectorField, dt: float) -> VectorField:
    return VectorField(a.grid, MAC, (a.ux - b.ux) / dt, (a.uy - b.uy) / dt)


def gronwall_budget(traj: "Trajectory", params: FluidParams) -> dict[str, float]:
    """Every supremum and time integral of the global a priori budget:

    * sup_t ( ||u||_{H^1}^2 + ||w||_{W^{1,4}}^2 + ||b||_{H^1}^2 )
    * int ( ||hess u||_{L^4}^2 + ||hess b||_{L^2}^2 ) dt
    * int ( ||d_t u||_{L^2}^2 + ||d_t w||_{L^4}^2 + ||d_t b||_{L^2}^2 ) dt

    Suprema come from the per-step records; the d_t u / d_t b integrals are
    formed from consecutive stored snapshots (step differences / dt), so a
    stride-1 trajectory yields the per-step quantities.  Returns a flat
    mapping of every component plus the grand total.
    """
    records = traj.records
    times = tuple(r.t for r in records)
    dt = _uniform_dt(times) if len(times) > 1 else 0.0

    sup_state_sq = 0.0
    sup_u_h1_sq = sup_w_w14_sq = sup_b_h1_sq = 0.0
    int_hess_u_l4_sq = int_hess_b_l2_sq = int_dtw_l4_sq = 0.0
    for k, r in enumerate(records):
        u_h1_sq = r.u_l2**2 + r.grad_u_l2**2
        w_w14_sq = math.sqrt(r.w_l4**4 + r.grad_w_l4**4)
        b_h1_sq = r.b_l2**2 + r.grad_b_l2**2
        sup_u_h1_sq = max(sup_u_h1_sq, u_h1_sq)
        sup_w_w14_sq = max(sup_w_w14_sq, w_w14_sq)
        sup_b_h1_sq = max(sup_b_h1_sq, b_h1_sq)
        sup_state_sq = max(sup_state_sq, u_h1_sq + w_w14_sq + b_h1_sq)
        if k >= 1:
            int_hess_u_l4_sq += dt * r.hess_u_l4**2
            int_hess_b_l2_sq += dt * r.hess_b_l2**2
            int_dtw_l4_sq += dt * r.dt_w_l4**2

    int_dtu_l2_sq = int_dtb_l2_sq = 0.0
    snaps = traj.states
    for k in range(1, len(snaps)):
        t_prev, s_prev = snaps[k - 1]
        t_new, s_new = snaps[k]
        step = t_new - t_prev
        du = _vector_diff(s_new.u, s_prev.u, step)
        db = _vector_diff(s_new.b, s_prev.b, step)
        int_dtu_l2_sq += step * lq_norm(du, 2.0) ** 2
        int_dtb_l2_sq += step * lq_norm(db, 2.0) ** 2

    budget = {
        "sup_state_sq": sup_state_sq,
        "sup_u_h1_sq": sup_u_h1_sq,
        "sup_w_w14_sq": sup_w_w14_sq,
        "sup_b_h1_sq": sup_b_h1_sq,
        "int_hess_u_l4_sq": int_hess_u_l4_sq,
        "int_hess_b_l2_sq": int_hess_b_l2_sq,
        "int_dtu_l2_sq": int_dtu_l2_sq,
        "int_dtw_l4_sq": int_dtw_l4_sq,
        "int_dtb_l2_sq": int_dtb_l2_sq,
    }
    budget["total"] = (
        sup_state_sq
        + int_hess_u_l4_sq
        + int_hess_b_l2_sq
        + int_dtu_l2_sq
        + int_dtw_l4_sq
        + int_dtb_l2_sq
    )
    return budget


# ---------------------------------------------------------------------------
# t-weighted smoothing audit
# ---------------------------------------------------------------------------


def tweighted_h2_audit(traj: "Trajectory", params: FluidParams) -> dict[str, float]:
    """t-weighted second-derivative ledger for rough initial data:

    * sup_t t ( ||hess u||^2 + ||hess b||^2 )  (and the b part alone),
    * the same supremum restricted to the late window t >= T/2,
    * int t ( ||grad d_t u||^2 + ||grad d_t b||^2 ) dt.

    The t = 0 norms may diverge under refinement for H^1-only data; the
    weighted quantities are the stable objects.  Time derivatives are step
    differences of stored snapshots; their accumulation starts at the second
    difference (the first one still touches the rough initial state).
    """
    records = traj.records
    if len(records) < 5:
        raise EstimateError("t-weighted audit needs at least 4 steps")
    times = tuple(r.t for r in records)
    _uniform_dt(times)
    t_end = times[-1]

    sup_t_hess_sq = sup_t_hess_b_sq = 0.0
    late_sup_t_hess_sq = late_sup_t_hess_b_sq = 0.0
    for r in records:
        weighted = r.t * (r.hess_u_l2**2 + r.hess_b_l2**2)
        weighted_b = r.t * r.hess_b_l2**2
        sup_t_hess_sq = max(sup_t_hess_sq, weighted)
        sup_t_hess_b_sq = max(sup_t_hess_b_sq, weighted_b)
        if r.t >= 0.5 * t_end:
            late_sup_t_hess_sq = max(late_sup_t_hess_sq, weighted)
            late_sup_t_hess_b_sq = max(late_sup_t_hess_b_sq, weighted_b)

    int_t_grad_dtu_sq = int_t_grad_dtb_sq = 0.0
    snaps = traj.states
    for k in range(2, len(snaps)):
        t_prev, s_prev = snaps[k - 1]
        t_new, s_new = snaps[k]
        step = t_new - t_prev
        du = _vector_diff(s_new.u, s_prev.u, step)
        db = _vector_diff(s_new.b, s_prev.b, step)
        int_t_grad_dtu_sq += step * t_new * samples_lq(gradient_samples(du), 2.0) ** 2
        int_t_grad_dtb_sq += step * t_new * samples_lq(gradient_samples(db), 2.0) ** 2

    return {
        "sup_t_hess_sq": sup_t_hess_sq,
        "sup_t_hess_b_sq": sup_t_hess_b_sq,
        "late_sup_t_hess_sq": late_sup_t_hess_sq,
        "late_sup_t_hess_b_sq": late_sup_t_hess_b_sq,
        "first_step_hess_b_sq": records[1].hess_b_l2**2,
        "int_t_grad_dtu_sq": int_t_grad_dtu_sq,
        "int_t_grad_dtb_sq": int_t_grad_dtb_sq,
    }


# ---------------------------------------------------------------------------
# Interpolation-inequality probe
# ---------------------------------------------------------------------------


def gn_ratios(f: ScalarField) -> dict[str, float] | None:
    """Observed LHS/RHS ratios (constants set to 1) of the four ladder
    inequalities for one scalar sample; None for the zero field (skipped):

    1. ||f||_4     <= ||f||_2^{1/2} ||grad f||_2^{1/2} + ||f||_2
    2. ||grad f||_4 <= ||f||_2^{1/4} ||hess f||_2^{3/4} + ||f||_2
    3. ||f||_inf   <= ||f||_2^{1/2} ||hess f||_2^{1/2} + ||f||_2
    4. ||f||_inf   <= ||f||_2^{2/3} ||third f||_2^{1/3} + ||f||_2
    """
    linf = max_abs(f)
    if linf == 0.0:
        return None
    l2 = lq_norm(f, 2.0)
    l4 = lq_norm(f, 4.0)
    g2 = samples_lq(gradient_samples(f), 2.0)
    g4 = samples_lq(gradient_samples(f), 4.0)
    h2 = samples_lq(hessian_samples(f), 2.0)
    d3 = samples_lq(third_derivative_samples(f), 2.0)
    return {
        "ratio1": l4 / (math.sqrt(l2) * math.sqrt(g2) + l2),
        "ratio2": g4 / (l2**0.25 * h2**0.75 + l2),
        "ratio3": linf / (math.sqrt(l2 * h2) + l2),
        "ratio4": linf / (l2 ** (2.0 / 3.0) * d3 ** (1.0 / 3.0) + l2),
    }


_PROBE_SMOOTHNESS = (0.8, 1.1, 1.6, 2.2)


def gn_probe(
    sample_count: int,
    grids: Sequence[GridSpec],
    seed: int = 0,
) -> dict:
    """Max observed ratio of each ladder inequality over a reproducible
    random sample family, per grid, with the same growth/stability
    convention as the Stokes probe (unstable when a per-level max ratio
    grows by more than 25%)."""
    levels = []
    for grid in grids:
        maxima = {f"ratio{i}": 0.0 for i in (1, 2, 3, 4)}
        for sample in range(sample_count):
            smoothness = _PROBE_SMOOTHNESS[sample % len(_PROBE_SMOOTHNESS)]
            f = probe_scalar(grid, seed, sample, smoothness)
            ratios = gn_ratios(f)
            if ratios is None:
                continue
            for key, value in ratios.items():
                maxima[key] = max(maxima[key], value)
        levels.append({"nx": grid.nx, **maxima})

    growth = {}
    unstable = False
    for key in ("ratio1", "ratio2", "ratio3", "ratio4"):
        ratios = []
        for a, b in zip(levels, levels[1:]):
            prev = a[key]
            ratios.append(b[key] / prev if prev > 0 else 1.0)
        growth[key] = max(ratios, default=1.0)
        unstable = unstable or growth[key] > 1.25
    return {
        "sample_count": sample_count,
        "levels": levels,
        "growth_per_level": growth,
        "unstable": unstable,
    }


# ---------------------------------------------------------------------------
# Weak-form residuals
# ---------------------------------------------------------------------------


def _bump_derivatives(cx: float, cy: float, r: float) -> dict[str, Callable]:
    """Closed-form derivative evaluators (orders 0-3) of the compactly
    supported C^4 bump ((1 - s^2)_+)^5 with s^2 = ((x-cx)^2+(y-cy)^2)/r^2."""
    import sympy

    x, y = sympy.symbols("x y", real=True)
    s2 = ((x - cx) ** 2 + (y - cy) ** 2) / (r * r)
    core = (1 - s2) ** 5
    keys = ("", "x", "y", "xx", "xy", "yy", "xxx", "xxy", "xyy", "yyy")
    out = {}
    for key in keys:
        expr = core
        for axis in key:
            expr = sympy.diff(expr, x if axis == "x" else y)
        fn = sympy.lambdify((x, y), sympy.expand(expr), modules="numpy")

        def masked(X, Y, _fn=fn):
            inside = ((X - cx) ** 2 + (Y - cy) ** 2) / (r * r) < 1.0
            vals = np.zeros_like(X)
            vals[inside] = np.asarray(_fn(X[inside], Y[inside]), dtype=float)
            return vals

        out[key] = masked
    return out


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _test_bank(size: int) -> list[dict[str, Callable]]:
    bank = []
    for k in range(size):
        cx = 0.32 + 0.36 * math.modf(0.5 + (k + 1) * _GOLDEN)[0]
        cy = 0.32 + 0.36 * math.modf(0.5 + (k + 1) * _GOLDEN * _GOLDEN)[0]
        r = 0.16 + 0.10 * math.modf((k + 1) * _GOLDEN**3)[0]
        bank.append(_bump_derivatives(cx, cy, r))
    return bank


def _cell_average(v: VectorField) -> tuple[np.ndarray, np.ndarray]:
    g = v.grid
    if g.periodic:
        ax = 0.5 * (v.ux + np.roll(v.ux, -1, axis=0))
        ay = 0.5 * (v.uy + np.roll(v.uy, -1, axis=1))
    else:
        ax = 0.5 * (v.ux[:-1, :] + v.ux[1:, :])
        ay = 0.5 * (v.uy[:, :-1] + v.uy[:, 1:])
    return ax, ay


def _node_average(v: VectorField) -> tuple[np.ndarray, np.ndarray]:
    g, n = v.grid, v.grid.nx
    if g.periodic:
        ax = 0.5 * (v.ux + np.roll(v.ux, 1, axis=1))
        ay = 0.5 * (v.uy + np.roll(v.uy, 1, axis=0))
        return ax, ay
    ax = np.empty((n + 1, n + 1))
    ax[:, 1:-1] = 0.5 * (v.ux[:, :-1] + v.ux[:, 1:])
    ax[:, 0] = v.ux[:, 0]
    ax[:, -1] = v.ux[:, -1]
    ay = np.empty((n + 1, n + 1))
    ay[1:-1, :] = 0.5 * (v.uy[:-1, :] + v.uy[1:, :])
    ay[0, :] = v.uy[0, :]
    ay[-1, :] = v.uy[-1, :]
    return ax, ay


def weak_form_residual(
    traj: "Trajectory",
    test_bank_size: int,
    params: FluidParams,
) -> dict:
    """Space-time residuals of the three weak integral identities against a
    bank of divergence-free bump tests, plus the per-time solenoidality
    pairings.

    Vector tests are the rotated gradients of compactly supported bumps B
    (so they are exactly divergence-free and vanish near the walls), scaled
    in time by the polynomial cutoff eta(t) = (1 - t/T)^3; the scalar tests
    reuse B.  Diffusion terms are integrated by parts analytically, so every
    pairing reduces to quadrature of the solution against closed-form
    derivative fields.  Each residual is O(dt + h^2) for a consistent run
    and exactly zero on the zero trajectory.
    """
    if test_bank_size < 1:
        raise EstimateError("weak-form audit needs a non-empty test bank")
    snaps = traj.states
    if len(snaps) < 2:
        raise EstimateError("weak-form audit needs at least one step")
    t_end = snaps[-1][0]
    grid = snaps[0][1].grid
    h = grid.h
    mu_chi = params.mu + params.chi

    cx_lattice = grid.mesh("cell")
    node_lattice = grid.mesh("node")
    xf_lattice = grid.mesh("xface")
    yf_lattice = grid.mesh("yface")
    cell_w = h * h

    def eta(t: float) -> float:
        return (1.0 - t / t_end) ** 3

    def eta_t(t: float) -> float:
        return -3.0 * (1.0 - t / t_end) ** 2 / t_end

    bank = _test_bank(test_bank_size)
    mom_res, rot_res, ind_res = [], [], []
    sol_max = 0.0
    node_w = None

    for bump in bank:
        Xc, Yc = cx_lattice
        # test vector Phi = perp_grad(B): (-B_y, B_x); its gradient and
        # vector laplacian come from B's higher derivatives.
        phi1 = bump["y"](Xc, Yc) * -1.0
        phi2 = bump["x"](Xc, Yc)
        d_phi = {
            ("x", 1): -bump["xy"](Xc, Yc),
            ("y", 1): -bump["yy"](Xc, Yc),
            ("x", 2): bump["xx"](Xc, Yc),
            ("y", 2): bump["xy"](Xc, Yc),
        }
        lap_b = bump["xx"](Xc, Yc) + bump["yy"](Xc, Yc)
        lap_phi1 = -(bump["xxy"](Xc, Yc) + bump["yyy"](Xc, Yc))
        lap_phi2 = bump["xxx"](Xc, Yc) + bump["xyy"](Xc, Yc)
        Xn, Yn = node_lattice
        b_node = bump[""](Xn, Yn)
        bx_node = bump["x"](Xn, Yn)
        by_node = bump["y"](Xn, Yn)
        lap_b_node = bump["xx"](Xn, Yn) + bump["yy"](Xn, Yn)
        pgb = VectorField(
            grid,
            MAC,
            -bump["y"](*xf_lattice),
            bump["x"](*yf_lattice),
        )
        theta_cell = ScalarField(grid, CELL, bump[""](Xc, Yc))
        grad_theta = grad(theta_cell)
        if node_w is None:
            node_w = lattice_weights(grid, "node")

        def time_quad(values: list[float]) -> float:
            total = 0.0
            for k in range(1, len(values)):
                step = snaps[k][0] - snaps[k - 1][0]
                total += 0.5 * step * (values[k] + values[k - 1])
            return total

        mom_terms, rot_terms, ind_terms = [], [], []
        for t_k, s_k in snaps:
            ux_c, uy_c = _cell_average(s_k.u)
            bx_c, by_c = _cell_average(s_k.b)
            u_dot_phi = float(np.sum(cell_w * (ux_c * phi1 + uy_c * phi2)))
            b_dot_phi = float(np.sum(cell_w * (bx_c * phi1 + by_c * phi2)))
            u_lap_phi = float(np.sum(cell_w * (ux_c * lap_phi1 + uy_c * lap_phi2)))
            b_lap_phi = float(np.sum(cell_w * (bx_c * lap_phi1 + by_c * lap_phi2)))
            uu = float(
                np.sum(
                    cell_w
                    * (
                        ux_c * ux_c * d_phi[("x", 1)]
                        + uy_c * ux_c * d_phi[("y", 1)]
                        + ux_c * uy_c * d_phi[("x", 2)]
                        + uy_c * uy_c * d_phi[("y", 2)]
                    )
                )
            )
            bb = float(
                np.sum(
                    cell_w
                    * (
                        bx_c * bx_c * d_phi[("x", 1)]
                        + by_c * bx_c * d_phi[("y", 1)]
                        + bx_c * by_c * d_phi[("x", 2)]
                        + by_c * by_c * d_phi[("y", 2)]
                    )
                )
            )
            ub = float(
                np.sum(
                    cell_w
                    * (
                        ux_c * bx_c * d_phi[("x", 1)]
                        + uy_c * bx_c * d_phi[("y", 1)]
                        + ux_c * by_c * d_phi[("x", 2)]
                        + uy_c * by_c * d_phi[("y", 2)]
                    )
                )
            )
            bu = float(
                np.sum(
                    cell_w
                    * (
                        bx_c * ux_c * d_phi[("x", 1)]
                        + by_c * ux_c * d_phi[("y", 1)]
                        + bx_c * uy_c * d_phi[("x", 2)]
                        + by_c * uy_c * d_phi[("y", 2)]
                    )
                )
            )
            w_lap = float(np.sum(cell_w * _node_to_cell(s_k.w.data, grid) * lap_b))
            mom_terms.append(
                eta_t(t_k) * u_dot_phi
                + eta(t_k) * (mu_chi * u_lap_phi + uu - bb + params.chi * w_lap)
            )
            ind_terms.append(
                eta_t(t_k) * b_dot_phi + eta(t_k) * (params.nu * b_lap_phi + ub - bu)
            )
            ax_n, ay_n = _node_average(s_k.u)
            w_b = float(np.sum(node_w * s_k.w.data * b_node))
            adv_pair = float(
                np.sum(node_w * s_k.w.data * (ax_n * bx_node + ay_n * by_node))
            )
            curl_pair = l2_inner(s_k.u, pgb)
            rot_terms.append(
                eta_t(t_k) * w_b
                + eta(t_k)
                * (-2.0 * params.chi * w_b + adv_pair - params.chi * curl_pair)
            )
            sol_max = max(
                sol_max,
                abs(l2_inner(s_k.u, grad_theta)),
                abs(l2_inner(s_k.b, grad_theta)),
            )

        t0, s0 = snaps[0]
        ux0, uy0 = _cell_average(s0.u)
        bx0, by0 = _cell_average(s0.b)
        mom_res.append(
            float(np.sum(cell_w * (ux0 * phi1 + uy0 * phi2))) * eta(t0)
            + time_quad(mom_terms)
        )
        ind_res.append(
            float(np.sum(cell_w * (bx0 * phi1 + by0 * phi2))) * eta(t0)
            + time_quad(ind_terms)
        )
        rot_res.append(
            float(np.sum(node_w * s0.w.data * b_node)) * eta(t0) + time_quad(rot_terms)
        )

    return {
        "momentum_max": max(abs(v) for v in mom_res),
        "microrotation_max": max(abs(v) for v in rot_res),
        "induction_max": max(abs(v) for v in ind_res),
        "max_residual": max(
            max(abs(v) for v in mom_res),
            max(abs(v) for v in rot_res),
            max(abs(v) for v in ind_res),
        ),
        "solenoidality_max": sol_max,
        "momentum": mom_res,
        "microrotation": rot_res,
        "induction": ind_res,
    }


def _node_to_cell(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic:
        return 0.25 * (
            a + np.roll(a, -1, axis=0) + np.roll(a, -1, axis=1) + np.roll(np.roll(a, -1, axis=0), -1, axis=1)
        )
    return 0.25 * (a[:-1, :-1] + a[1:, :-1] + a[:-1, 1:] + a[1:, 1:])


# ---------------------------------------------------------------------------
# Combined-quantity diagnostic
# ---------------------------------------------------------------------------


def z_diagnostic(traj: "Trajectory", params: FluidParams) -> tuple[tuple[float, float], ...]:
    """L^2 size of the combined node scalar curl2(u) - chi/(mu+chi) w at
    every stored snapshot — descriptive only."""
    out = []
    for t_k, s_k in traj.states:
        out.append((t_k, lq_norm(z_field(s_k, params), 2.0)))
    return tuple(out)


# ---------------------------------------------------------------------------
# Refinement utilities
# ---------------------------------------------------------------------------


def refinement_stable(values: Sequence[float], fraction: float = 0.25) -> dict:
    """Shrinking-increment stability across refinement levels.

    Stable means: successive increments |v_{k+1} - v_k| do not grow (within
    10% slack), and the final increment is at most ``fraction`` of the final
    value's magnitude.  Two levels check only the final-increment rule.
    """
    if len(values) < 2:
        raise EstimateError("stability check needs at least two levels")
    scale = max(abs(v) for v in values)
    atol = 1e-9 * max(scale, 1e-30)
    increments = [abs(b - a) for a, b in zip(values, values[1:])]
    shrinking = all(
        b <= 1.1 * a + atol for a, b in zip(increments, increments[1:])
    )
    last_ok = increments[-1] <= fraction * max(abs(values[-1]), atol)
    return {
        "stable": shrinking and last_ok,
        "increments": increments,
        "last_fraction": increments[-1] / max(abs(values[-1]), atol),
    }


def refinement_order(values: Sequence[float], refine_factor: float = 2.0) -> float:
    """Mean convergence order from a sequence of error magnitudes measured
    at successively refined resolutions (each level refined by
    ``refine_factor``); returns +inf when an error underflows to zero."""
    if len(values) < 2:
        raise EstimateError("order fit needs at least two levels")
    orders = []
    for a, b in zip(values, values[1:]):
        if b == 0.0:
            return math.inf
        if a == 0.0:
            return -math.inf
        orders.append(math.log(a / b) / math.log(refine_factor))
    return sum(orders) / len(orders)
