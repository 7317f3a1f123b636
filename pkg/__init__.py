"""Attribute Painter Package.

Multi-attribute guided painting generation: a content photo is stylised under
a chosen (artist, period, genre) triple by an asymmetric cycle of generators
conditioned through MLP-parsed adaptive instance normalisation.
"""

from painter_core import AXES, AttributeSchema, Mode, PainterError
from config import RunConfig, build_config, load_config, save_config
from conditioning import AttributeSet, build_condition, encode_attribute, perturb_genre
from networks import PainterNetworks, backward_generate, forward_generate
from training import TrainState, fit, init_state, restore, snapshot, train_step
from evaluation import MetricsReport, evaluate_checkpoint, inception_score, train_judge

__version__ = "0.1.0"
__author__ = "labgadget015-dotcom"

__all__ = [
    "AXES",
    "AttributeSchema",
    "Mode",
    "PainterError",
    "RunConfig",
    "build_config",
    "load_config",
    "save_config",
    "AttributeSet",
    "build_condition",
    "encode_attribute",
    "perturb_genre",
    "PainterNetworks",
    "forward_generate",
    "backward_generate",
    "TrainState",
    "init_state",
    "train_step",
    "fit",
    "snapshot",
    "restore",
    "MetricsReport",
    "evaluate_checkpoint",
    "inception_score",
    "train_judge",
]
