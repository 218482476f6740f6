"""Architecture configuration and named presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from ..errors import ConfigError

DISTANCES = ("euclidean", "cosine")
CAUSAL_WINDOWS = ("full", "pre")
# widths of the desk preset are the full widths divided by this factor
DESK_WIDTH_FACTOR = 32


@dataclass(frozen=True)
class ModelConfig:
    text_embed_dim: int = 768
    text_proj_hidden: int = 1024
    series_embed_dim: int = 768
    residual_hidden: int = 1024
    fusion_hidden: int = 1024
    decoder_tokens: int = 8
    decoder_layers: int = 12
    decoder_heads: int = 4
    regressor_layers: int = 4
    regressor_hidden: int = 1024
    dropout: float = 0.1
    margin: float = 1.0
    distance: str = "euclidean"
    d: int = 1
    pred_len: int = 35
    # substitute encoders (token/patch embedding + bidirectional blocks)
    vocab_size: int = 8192
    max_text_len: int = 512
    text_layers: int = 2
    text_heads: int = 12
    patch_len: int = 7
    max_window: int = 280
    series_layers: int = 2
    series_heads: int = 12
    # ablation switches
    use_text: bool = True
    use_fusion: bool = True
    use_decoder: bool = True
    use_regressor: bool = True
    causal_window: str = "full"
    init_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        dims = {k: getattr(self, k) for k in (
            "text_embed_dim", "text_proj_hidden", "series_embed_dim", "residual_hidden",
            "fusion_hidden", "decoder_tokens", "decoder_heads", "regressor_hidden", "d",
            "pred_len", "vocab_size", "max_text_len", "patch_len", "max_window",
            "text_heads", "series_heads",
        )}
        bad = [k for k, v in dims.items() if not isinstance(v, int) or v <= 0]
        if bad:
            raise ConfigError(f"dimensions must be positive integers: {', '.join(bad)}")
        if min(self.decoder_layers, self.regressor_layers, self.text_layers, self.series_layers) < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.fusion_hidden % self.decoder_tokens:
            raise ConfigError(
                f"decoder token count {self.decoder_tokens} does not divide fusion width {self.fusion_hidden}"
            )
        if self.token_dim % self.decoder_heads:
            raise ConfigError(f"decoder heads {self.decoder_heads} do not divide token dim {self.token_dim}")
        if self.text_embed_dim % self.text_heads or self.series_embed_dim % self.series_heads:
            raise ConfigError("encoder head counts must divide encoder widths")
        if self.text_embed_dim != self.series_embed_dim:
            raise ConfigError("text and series embeddings must share a width (concat and triplet distance)")
        if self.distance not in DISTANCES:
            raise ConfigError(f"distance must be one of {DISTANCES}")
        if self.causal_window not in CAUSAL_WINDOWS:
            raise ConfigError(f"causal_window must be one of {CAUSAL_WINDOWS}")
        if self.d not in (1, 4):
            raise ConfigError("forecast channels d must be 1 (close) or 4 (OHLC)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")

    @property
    def token_dim(self) -> int:
        return self.fusion_hidden // self.decoder_tokens

    @property
    def channels(self) -> tuple[int, ...]:
        return (3,) if self.d == 1 else (0, 1, 2, 3)

    @property
    def max_patches(self) -> int:
        return -(-self.max_window // self.patch_len)

    def replace(self, **changes) -> "ModelConfig":
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


PAPER = ModelConfig()

DESK = ModelConfig(
    text_embed_dim=768 // DESK_WIDTH_FACTOR,
    text_proj_hidden=1024 // DESK_WIDTH_FACTOR,
    series_embed_dim=768 // DESK_WIDTH_FACTOR,
    residual_hidden=1024 // DESK_WIDTH_FACTOR,
    fusion_hidden=1024 // DESK_WIDTH_FACTOR,
    decoder_tokens=4,
    decoder_layers=2,
    decoder_heads=2,
    regressor_layers=4,
    regressor_hidden=1024 // DESK_WIDTH_FACTOR,
    vocab_size=1024,
    max_text_len=48,
    text_layers=2,
    text_heads=2,
    series_layers=2,
    series_heads=2,
)

PRESETS = {"paper": PAPER, "desk": DESK}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base
