"""Bidirectional InfoGAN on a small numpy autodiff core."""
from .config import ExperimentConfig, dump_config, load_config, parse_config
from .latent import EncoderPosterior, LatentBatch, LatentSpec, mutual_info_bound, sample_latent
from .networks import Architecture, init_params
from .tensor import Tape, Tensor
from .training import LossReport, TrainConfig, train_loop, train_step

__version__ = "0.1.0"
