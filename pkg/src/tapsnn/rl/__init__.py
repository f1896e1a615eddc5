from .buffer import Episode, EpisodeBuffer, SequenceBatch
from .loops import EvalResult, TrainConfig, evaluate, train

__all__ = [
    "Episode",
    "EpisodeBuffer",
    "SequenceBatch",
    "TrainConfig",
    "EvalResult",
    "train",
    "evaluate",
]
