"""superinfo - contrastive pretraining with superfluous-information regularization"""
__version__ = "0.1.0"
__author__ = "Cherry Computer Ltd."

from .config import LossWeights, RunConfig, SuperInfoConfig
from .info import JointDistribution
from .cli import main

__all__ = ["LossWeights", "RunConfig", "SuperInfoConfig", "JointDistribution", "main"]
