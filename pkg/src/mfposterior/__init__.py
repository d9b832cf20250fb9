"""Multifidelity surrogate likelihoods and posterior inference."""

__version__ = "0.1.0"

from .bayes import LikelihoodSpec, NoiseSpec, PosteriorSpec, PriorSpec  # noqa: E402
from .data import Dataset  # noqa: E402
from .flows import FlowModel, sample_flow, train_flow  # noqa: E402
from .inference import (dream_sample, gelman_rubin, grid_posterior, hellinger,  # noqa: E402
                        knn_kl_divergence, pearson)
from .nn import MlpNet, TrainConfig  # noqa: E402
from .surrogates import fit_alpha_opt, train_dense, train_neuram  # noqa: E402
