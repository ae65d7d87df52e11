"""Laplacian autoencoder: linear-scaling diagonal GGN curvature, Gaussian
weight posteriors fitted post-hoc or online, and uncertainty-driven
downstream evaluations."""

from .layers import (Conv2d, Layer, Linear, MaxPool2d, ReLU, Reshape,
                     ShapeError, Tanh, UpsampleNearest)
from .loss import Bernoulli, GaussianMSE
from .network import (ArchSpec, Network, build_network, decode, encode,
                      forward, grad_params)
from .curvature import (ApproxDiagonal, BlockDiagonal, CurvatureResult,
                        ExactDiagonal, MemoryGuardError, MixedDiagonal,
                        ggn_backprop, loss_output_hessian)
from .posterior import (DiagGaussianPosterior, UncertaintySummary, init_prior,
                        laplace_mean_shift, optimize_prior_precision,
                        posterior_predict, posthoc_fit, sample_params)
from .trainer import (AdamState, TrainConfig, TrainReport, adam_step,
                      lae_online_step, train_map, train_online)
from .tasks import (CalibrationReport, ImputationConfig, OodScores, auroc,
                    calibration, classify, impute, knn_semisup_eval,
                    latent_variance_map, ood_scores, train_simple_classifier)
from .dataio import Dataset, IdxFormatError, load_dataset, parse_idx, serialize_idx

__all__ = [
    "AdamState", "ApproxDiagonal", "ArchSpec", "Bernoulli", "BlockDiagonal",
    "CalibrationReport", "Conv2d", "CurvatureResult", "Dataset",
    "DiagGaussianPosterior", "ExactDiagonal", "GaussianMSE", "IdxFormatError",
    "ImputationConfig", "Layer", "Linear", "MaxPool2d", "MemoryGuardError",
    "MixedDiagonal", "Network", "OodScores", "ReLU", "Reshape", "ShapeError",
    "Tanh", "TrainConfig", "TrainReport", "UncertaintySummary",
    "UpsampleNearest", "adam_step", "auroc", "build_network", "calibration",
    "classify", "decode", "encode", "forward", "ggn_backprop", "grad_params",
    "impute", "init_prior", "knn_semisup_eval", "lae_online_step",
    "laplace_mean_shift", "latent_variance_map", "load_dataset",
    "loss_output_hessian", "ood_scores", "optimize_prior_precision",
    "parse_idx", "posterior_predict", "posthoc_fit", "sample_params",
    "serialize_idx", "train_map", "train_online", "train_simple_classifier",
]
