"""Staggered-grid simulator and estimate-audit harness for two-dimensional
incompressible magneto-micropolar flow whose micro-rotation field carries no
diffusion (zero angular viscosity).
"""

from .config import ConfigError, RunConfig, load_config, parse_config
from .estimates import (
    DiagnosticsRecord,
    EstimateError,
    EstimateLedger,
    diagnostics_record,
    energy_audit,
    gn_probe,
    gronwall_budget,
    refinement_order,
    refinement_stable,
    tweighted_h2_audit,
    w_lq_audit,
    weak_form_residual,
    z_diagnostic,
)
from .evolution import (
    CflError,
    NonFiniteError,
    StepConfig,
    StepError,
    Trajectory,
    manufactured_forcing,
    run_simulation,
    step_coupled,
    step_mhd_forced,
    step_w_transport,
)
from .experiments import (
    ExperimentError,
    convergence_study,
    schauder_fixed_point,
    simulate_run,
    uniqueness_probe,
)
from .fields import (
    CELL,
    COLOCATED,
    MAC,
    MODE_DIRICHLET,
    MODE_PERIODIC,
    NODE,
    FieldError,
    FluidParams,
    GridSpec,
    ScalarField,
    State,
    VectorField,
    curl2,
    div,
    grad,
    l2_inner,
    laplacian,
    lattice_weights,
    lq_norm,
    max_abs,
    perp_grad,
    sobolev_norms,
)
from .recipes import RecipeError, initial_state, mms_forcing, mms_state, mollify
from .snapshots import SnapshotError, read_snapshot, write_snapshot
from .stokes import (
    SolverError,
    StokesSolution,
    aux_field_v,
    compose_g,
    helmholtz_solve,
    leray_project,
    solve_stationary_stokes,
    stokes_regularity_probe,
)

__all__ = [
    "CELL",
    "COLOCATED",
    "MAC",
    "MODE_DIRICHLET",
    "MODE_PERIODIC",
    "NODE",
    "CflError",
    "ConfigError",
    "DiagnosticsRecord",
    "EstimateError",
    "EstimateLedger",
    "ExperimentError",
    "FieldError",
    "FluidParams",
    "GridSpec",
    "NonFiniteError",
    "RecipeError",
    "RunConfig",
    "ScalarField",
    "SnapshotError",
    "SolverError",
    "State",
    "StepConfig",
    "StepError",
    "StokesSolution",
    "Trajectory",
    "VectorField",
    "aux_field_v",
    "compose_g",
    "convergence_study",
    "curl2",
    "diagnostics_record",
    "div",
    "energy_audit",
    "gn_probe",
    "grad",
    "gronwall_budget",
    "helmholtz_solve",
    "initial_state",
    "l2_inner",
    "laplacian",
    "lattice_weights",
    "leray_project",
    "load_config",
    "lq_norm",
    "manufactured_forcing",
    "max_abs",
    "mms_forcing",
    "mms_state",
    "mollify",
    "parse_config",
    "perp_grad",
    "read_snapshot",
    "refinement_order",
    "refinement_stable",
    "run_simulation",
    "schauder_fixed_point",
    "simulate_run",
    "sobolev_norms",
    "solve_stationary_stokes",
    "step_coupled",
    "step_mhd_forced",
    "step_w_transport",
    "stokes_regularity_probe",
    "tweighted_h2_audit",
    "uniqueness_probe",
    "w_lq_audit",
    "weak_form_residual",
    "write_snapshot",
    "z_diagnostic",
]

__version__ = "0.1.0"
