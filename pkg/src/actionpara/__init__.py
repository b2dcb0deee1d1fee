"""Action-controlled paraphrase generation: K/P/O action tokens per source word."""

from .actions import Action, Mode, StrategyWeights, derive_actions
from .model import ModelConfig
from .pipeline import Paraphraser
from .text_prep import NormalizeConfig, Vocab
from .trainer import TrainConfig

__all__ = [
    "Action", "Mode", "StrategyWeights", "derive_actions",
    "ModelConfig", "NormalizeConfig", "Paraphraser", "TrainConfig", "Vocab",
]
__version__ = "0.1.0"
