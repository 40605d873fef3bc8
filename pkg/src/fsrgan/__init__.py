"""Layer-wise GAN learning of a synthetic forward super-resolution generator.

Submodules: :mod:`numerics` (smoothed activations, streams, alignment),
:mod:`target` and :mod:`learner` (the two generators), :mod:`warm_start`,
:mod:`discriminators`, :mod:`sgda`, :mod:`pipeline`, :mod:`evaluation`,
:mod:`serialization`, :mod:`config` and :mod:`cli`.
"""
from .config import ConfigError, ExperimentConfig, desk_config, load_config, parse_config
from .learner import LearnerNetwork, forward, init_learner
from .numerics import SmoothingParams, make_stream
from .pipeline import TrainingError, train, train_layer, warm_start_all
from .serialization import load_network, save_network
from .target import NetworkShape, TargetNetwork, construct_generic, sample_real, target_forward, verify_assumptions

__all__ = [
    "ConfigError", "ExperimentConfig", "desk_config", "load_config", "parse_config",
    "LearnerNetwork", "forward", "init_learner", "SmoothingParams", "make_stream",
    "TrainingError", "train", "train_layer", "warm_start_all", "load_network", "save_network",
    "NetworkShape", "TargetNetwork", "construct_generic", "sample_real", "target_forward", "verify_assumptions",
]
__version__ = "0.1.0"
