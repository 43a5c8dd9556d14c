"""Transductive, stability-oriented conformal calibration under covariate shift.

A conditional score-CDF model trained on a labeled source domain is aligned,
on a quantile grid, to the empirical score distribution of a small labeled
target sample, using a large unlabeled target sample to form the marginal.
A penalty weight ``lam`` trades the plain conformal threshold (``lam = 0``)
against the model's plug-in threshold (``lam`` large).
"""

from .align import (
    AlignmentConfig,
    AlignmentResult,
    LambdaSelection,
    LambdaSelectionConfig,
    align,
    alignment_gradient,
    alignment_objective,
    grid_targets,
    lambda_table_csv,
    level_grid,
    select_lambda,
    stcp_quantile,
)
from .calib import (
    AlphaLevels,
    StepwiseCdf,
    conformal_quantile,
    debiased_cdf,
    debiased_cdf_raw,
    debiased_grid,
    debiased_quantile,
    dp_quantile,
    empirical_cdf,
    empirical_quantile,
    mixture_cdf_eval,
    mixture_cdf_grad,
    mixture_cdf_pdf,
    mixture_cdf_quantile,
    oracle_quantile,
)
from .data import DataBundle, LabeledSample, SeedSpec, derive_stream, derive_substream, standard_normal
from .predictors import (
    CondCdfParams,
    MeanPredictor,
    QuantilePredictor,
    cond_cdf_eval,
    cond_cdf_grad,
    cond_cdf_pdf,
    cond_cdf_quantile,
    fit_cond_cdf,
    fit_linear_mean,
    fit_linear_quantile,
    model_from_json,
    model_to_json,
    pinball_loss,
)
from .scores import CqrScore, GlcpScore, ResidualScore, score, set_bounds, set_contains, set_size

__version__ = "0.1.0"
