"""Regression kink estimation with a kink location that varies with an observed shifter."""

from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    DEFAULT_GAMMA_GRID,
    DEFAULT_QUERY_GRID,
    Dataset,
    DegenerateWindowError,
    Grid,
    KinkBasis,
    LocalFit,
    ModelSpec,
    NpkinkError,
    SingularFitError,
    ValidationError,
    kink_basis,
    kink_design,
    validate,
)
from .estimator import (
    CoefficientEstimate,
    ProfileCurve,
    ThresholdContour,
    estimate_contour,
    grid_search,
    interior_mask,
    leave_one_out_thresholds,
    local_fit,
    naive_grid_search,
    profile_ssr,
    second_step_beta,
)
from .fitting import FitResult, fit
from .inference import BootstrapResult, ControlFunctionResult, control_function, wild_bootstrap
from .kernel import WeightVector, bandwidth, kernel_eval, local_weights
from .pipeline import CleaningSpec, HeatmapGrid, LoadError, Schema, clean, heatmap, load_csv
from .simulation import DgpSpec, SimulationReport, generate, run_monte_carlo, snr, true_threshold
