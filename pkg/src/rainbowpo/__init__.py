"""Toy-scale laboratory for the RainbowPO family of preference-optimisation losses."""

from .core import PreferenceDataset, PreferencePair, RngStream, substream
from .dispersion import DispersionConfig, dispersion
from .losses import LinkFunction, LossReport, RainbowConfig, orpo_loss, orpo_po_bound, rainbow_loss
from .policy import PolicyModel, conditional_entropy, grad_log_prob, log_prob, sample
from .sampler import SamplerConfig, best_worst_of_k, percentiles, rs_plus
from .trainer import TrainConfig, lr_at_step, train

__version__ = "0.1.0"
