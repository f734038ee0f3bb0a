"""Mixture-of-variational-experts latent policies for reactive human-robot interaction."""

from .datasets import DatasetSplit, FeatureSpec, ObservationWindow, TrajectoryPair
from .gmr import HMMSpec, JointGaussianComponent, JointGMM, condition_gmm, hmm_forward_coefficients, simplified_covariance
from .model import DiagonalGaussian, MixtureDensity, ModelConfig, MoVEInt, RecurrentState, combine_mixture

__version__ = "0.1.0"
