"""Sensor attributions from anchored autoencoder ensembles, in centralised
and coalitional (one model per sensor) configurations, with metrics that
score explanations against known covariate shift."""

from .bae import (
    BaeEnsemble,
    FittedModel,
    Hyperparams,
    attribute,
    fit_configuration,
    lr_range_test,
    nll_cube,
    run_configuration,
    train_bae,
)
from .cube import AttributionMatrix, SensorCube
from .metrics import EvaluationReport, evaluate, g_sdc, g_sser, group_pearson, mcc, seqi, spearman
from .nn import Architecture, LayerSpec, ParamSet

__version__ = "0.1.0"
