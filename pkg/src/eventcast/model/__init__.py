"""Multi-modal forecasting network and its losses."""

from .config import DESK, PAPER, PRESETS, ModelConfig, preset
from .losses import distance, time_loss, total_loss, triplet_loss
from .network import (
    decode,
    encode_series,
    encode_text,
    forward,
    fuse,
    init_params,
    reconstruction_loss,
    regress,
    series_base,
)
from .tokenizer import encode_batch

__all__ = [
    "DESK",
    "PAPER",
    "PRESETS",
    "ModelConfig",
    "decode",
    "distance",
    "encode_batch",
    "encode_series",
    "encode_text",
    "forward",
    "fuse",
    "init_params",
    "preset",
    "reconstruction_loss",
    "regress",
    "series_base",
    "time_loss",
    "total_loss",
    "triplet_loss",
]
