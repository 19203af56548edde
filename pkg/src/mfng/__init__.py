"""Metric-free natural gradient training for Boltzmann machines."""

from .ais import AisConfig, ais_log_z
from .evaluation import exact_fim, exact_log_z, exact_loglik, exact_natural_gradient
from .inference import ChainPool, InferenceConfig, gibbs_sweep, mean_field_posterior, sample_negative
from .metric import MetricOperator, SampleMatrix, apply_metric, build_sample_matrix, dense_metric, metric_diagonal
from .model import DbmModel, GenericBm, ParamLayout, ParamVector, energy, energy_grad, init_dbm, uncenter
from .optim import (TrainConfig, mfng_diag_iteration, mfng_iteration, nll_gradient, sml_iteration,
                    train)
from .solver import SolverConfig, SolveResult, cg, minres

__version__ = "0.1.0"
