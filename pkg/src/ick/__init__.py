"""Implicit composite kernel (ICK) models.

An ICK model joins per-source latent vectors, one from a neural network and
the others from kernel-to-latent maps, with a chained inner product.  The
package also provides the exact composite-kernel GP these models approximate,
deep-ensemble training, metrics, data generators and a command line.
"""

from . import data, ensemble, experiments, kernels, latentmap, linalg, metrics, model, nn
from .data import Dataset, SplitSpec, gen_synth_tanh, load_csv, sample_gp_prior, split
from .ensemble import EnsembleConfig, GpPosterior, ensemble_stats, gp_exact_posterior, prior_covariance_mc, train_ensemble
from .errors import *  # noqa: F401,F403
from .kernels import KernelSpec, kernel_eval, kernel_matrix, kernel_param_grad
from .latentmap import NystromMap, RffMap
from .metrics import eigen_gap_ratio, empirical_w1, kernel_recon_error, msll, regression_errors, spearman
from .model import IckModel, KernelBranchSpec, ModelSpec, NNBranchSpec, TrainConfig, ick_predict, train

__version__ = "0.1.0"
