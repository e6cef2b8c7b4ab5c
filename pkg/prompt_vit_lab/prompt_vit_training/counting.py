"""Closed-form parameter counts, without allocating any weights."""

from dataclasses import asdict, dataclass

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_prompts.configs import PromptConfig
from prompt_vit_prompts.models import VRM_WIDTHS
from prompt_vit_prompts.text_encoders import HASH_BUCKETS

from .models import ParamGroup, trainable_groups
from .modes import TuningMode


def _linear(fan_in: int, fan_out: int) -> int:
    return fan_in * fan_out + fan_out


def backbone_count(config: ModelConfig) -> int:
    c, hidden = config.dim, config.mlp_dim
    per_layer = 2 * c + _linear(c, 3 * c) + _linear(c, c) + 2 * c + _linear(c, hidden) + _linear(hidden, c)
    embeddings = _linear(config.patch_dim, c) + c + (1 + config.num_patches) * c
    return embeddings + config.layers * per_layer + 2 * c


def vrm_count(dim: int, in_channels: int = 3, widths: tuple[int, ...] = VRM_WIDTHS) -> int:
    total, previous = 0, in_channels
    for width in widths:
        total += previous * width * 9 + width
        previous = width
    return total + _linear(previous, dim)


def head_count(dim: int, num_classes: int, level: str = "patch") -> int:
    if level == "wsi":
        hidden = max(dim // 2, 8)
        return 2 * _linear(dim, hidden) + _linear(hidden, 1) + _linear(dim, num_classes)
    return _linear(dim, num_classes)


@dataclass(frozen=True)
class ParameterCount:
    total: int  # excluding the text encoder
    trainable: int
    text_encoder: int
    fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def analytic_parameter_count(
    model_config: ModelConfig,
    prompt_config: PromptConfig,
    mode: TuningMode,
    level: str = "patch",
    encoder_dim: int = 768,
    hash_buckets: int = HASH_BUCKETS,
) -> ParameterCount:
    prompts = mode.effective_prompts(prompt_config)
    c = model_config.dim
    groups = {
        ParamGroup.BACKBONE: backbone_count(model_config),
        ParamGroup.TVP: model_config.layers * prompts.tvp_tokens * c,
        ParamGroup.TEXT_PROJECTION: _linear(encoder_dim, prompts.ttp_tokens * c) if prompts.ttp_tokens else 0,
        ParamGroup.VRM: vrm_count(c, model_config.in_channels) if prompts.ivp_tokens else 0,
        ParamGroup.HEAD: head_count(c, model_config.num_classes, level),
    }
    text_encoder = hash_buckets * encoder_dim if prompts.ttp_tokens else 0
    total = sum(groups.values())
    trainable = sum(count for group, count in groups.items() if group in trainable_groups(mode))
    return ParameterCount(
        total=total,
        trainable=trainable,
        text_encoder=text_encoder,
        fraction=trainable / total if total else 0.0,
    )
