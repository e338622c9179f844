"""Perturbation theory for reduced Hartree-Fock ground states on lattices."""

from .deg_pt import DegSeries, block_frame, expand_degenerate, theta_apply, theta_solve
from .errors import (
    AccuracyError,
    ConsistencyError,
    ConvergenceError,
    DomainError,
    InputError,
    LinearSolverError,
    NumericOverflowError,
    PreconditionError,
    RHFError,
    StructuralError,
)
from .experiments import ExperimentConfig, fd_oracle, load_config
from .ground_state import (
    BOUNDARY,
    DEGENERATE,
    NONDEGENERATE,
    GroundState,
    classify,
    load_ground_state,
    save_ground_state,
    solve_scf,
    uniqueness_kernel_test,
)
from .model import LatticeSystem, build_demo_system, build_double_well, build_ring, energy, mean_field
from .mo_pt import MOSeries, mo_expand
from .nondeg_pt import NondegSeries, contour_q, expand, solve_screened
from .wigner import SlopeReport, pi_project, wigner_check_deg, wigner_check_nondeg

__version__ = "0.1.0"
