"""Deep linear discriminant analysis with a density-penalised likelihood."""

from .errors import DeepLdaError
from .lda_head import CovarianceParam, LdaParams, discriminants, make_params, posterior, predict, sample
from .losses import CROSS_ENTROPY, DNLL, NLL, Objective, batch_loss
from .train import Encoder, TrainConfig, fit_classical, fit_deep

__all__ = [
    "CROSS_ENTROPY", "DNLL", "NLL", "CovarianceParam", "DeepLdaError", "Encoder", "LdaParams", "Objective",
    "TrainConfig", "batch_loss", "discriminants", "fit_classical", "fit_deep", "make_params", "posterior",
    "predict", "sample",
]
