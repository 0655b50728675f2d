"""DivNet: diversity-aware, self-correcting sequential slate reranking."""

from .model import (
    DivNetParams,
    ModelConfig,
    RankingInstance,
    SlateDecode,
    decode_slate,
    export_attention,
    positional_encoding,
)
from .training import TrainConfig, TrainState, train

__all__ = [
    "DivNetParams",
    "ModelConfig",
    "RankingInstance",
    "SlateDecode",
    "TrainConfig",
    "TrainState",
    "decode_slate",
    "export_attention",
    "positional_encoding",
    "train",
]

__version__ = "0.1.0"
