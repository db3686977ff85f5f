"""Encoder training for the steered mixture-of-experts block model."""

from .arch import EncoderArch
from .model import EncoderDecoder, MixtureDecoder, build_model
from .train import TrainConfig, TrainReport, overfit_steps, train

__version__ = "0.1.0"
