"""Locality-aware generalizable implicit neural representations in numpy."""

from .config import RunConfig, load_config, parse_config
from .data import DataInstance, image_instance, images_to_instances, lightfield_instance
from .decoder import DecoderConfig, LocalityAwareDecoder
from .encoder import EncoderConfig, LatentEncoder
from .errors import ConfigError, ContractError, FormatError, ShapeError, TrainingDiverged
from .estimator import LocalityAwareINR
from .model import INRNetwork, predict, render_novel_view
from .training import TrainConfig, Trainer, psnr

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DataInstance", "DecoderConfig", "EncoderConfig",
    "FormatError", "INRNetwork", "LatentEncoder", "LocalityAwareDecoder", "LocalityAwareINR",
    "RunConfig", "ShapeError", "TrainConfig", "Trainer", "TrainingDiverged", "image_instance",
    "images_to_instances", "lightfield_instance", "load_config", "parse_config", "predict", "psnr", "render_novel_view",
]
