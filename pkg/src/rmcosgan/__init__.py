"""RMCosGAN laboratory: relativistic margin-cosine GAN loss, seven baseline
losses, a small numpy autodiff engine and toy-scale FID/IS metrics."""

from .autodiff import Tensor, backward, no_grad, finite_difference_gradient, AdamState, adam_step
from .losses import LossKind, MarginCosineParams, LogitBatch, discriminator_loss, generator_loss, rmcos_objective
from .metrics import GaussianStats, fit_gaussian, frechet_distance, inception_score
from .harness import ExperimentConfig, train, evaluate

__version__ = "0.1.0"
