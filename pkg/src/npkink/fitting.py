"""End-to-end fit: control functions, threshold contour, second step and bootstrap."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, DegenerateWindowError, ModelSpec, ValidationError, validate
from .estimator import (
    CoefficientEstimate,
    ThresholdContour,
    estimate_contour,
    second_step_beta,
)
from .inference import BootstrapResult, ControlFunctionResult, control_function, wild_bootstrap

__all__ = ["FitResult", "fit"]


@dataclass(frozen=True, eq=False)
class FitResult:
    contour: ThresholdContour
    estimate: CoefficientEstimate
    dataset: Dataset
    control: ControlFunctionResult
    bootstrap: BootstrapResult | None = None


def fit(
    dataset: Dataset,
    spec: ModelSpec | None = None,
    *,
    bootstrap: int = 0,
    alpha: float = 0.05,
    seed: int = 0,
) -> FitResult:
    """Estimate the contour and the slope coefficients.

    Parameters
    ----------
    dataset : Dataset
    spec : ModelSpec, optional
        ``spec.endogenous_columns`` triggers the control-function correction;
        the residuals enter both the local fits and the second step.
    bootstrap : int
        Number of wild-bootstrap draws; 0 skips inference.
    alpha, seed
        Percentile interval level and bootstrap seed.
    """
    spec = spec or ModelSpec()
    problems = validate(dataset, spec)
    if problems:
        raise ValidationError("; ".join(problems))
    cf = control_function(dataset, spec.endogenous_columns)
    data = cf.augmented
    contour = estimate_contour(data, spec, leave_one_out=True)
    if not np.isfinite(contour.loo_gamma).any():
        raise DegenerateWindowError("no observation has enough kernel mass for a local fit")
    est = second_step_beta(data, contour.loo_gamma, contour.interior_mask, contour.gamma_grid)
    boot = None
    if bootstrap:
        boot = wild_bootstrap(
            data, contour.loo_gamma, contour.interior_mask, est, B=bootstrap, alpha=alpha, seed=seed
        )
        est = replace(est, standard_errors=boot.standard_errors)
    return FitResult(contour=contour, estimate=est, dataset=data, control=cf, bootstrap=boot)

