"""Rate constant matrix contraction for stiff master equations dx/dt = K x."""

from .analysis import (
    Eigenbasis,
    ErrorReport,
    dense_eigendecompose,
    error_bound,
    error_report,
    exact_solution,
    expected_error_bound,
    linf_error,
    optimal_time,
    original_rcmc,
    pi_error,
)
from .contraction import ContractionState, marginal_logdet_gain, schur_step, select_steady
from .core import (
    DEFAULT_TOL,
    KineticNetwork,
    RateMatrix,
    RCMCError,
    Tolerances,
    ValidationError,
    stationary_from_balance,
    validate,
)
from .io import build_canonical, build_from_laplacian, synthesize
from .pimetric import MCholeskyFactor, PiCholeskyFactor, PiMetric, pi_inner, pi_norm
from .propagator import Snapshot, TimeMethod, Trajectory, Variant, apply_V, run
from .simplex import ProjectionResult, project_pi

__version__ = "0.1.0"
