"""
Adapted model = frozen-or-tuned backbone + prompt bundle + task head

Parameter names are grouped by prefix:
    backbone.*               foundation weights
    prompts.tvp.*            task visual prompts
    prompts.ttp.projection.* textual prompt projection
    prompts.ttp.encoder.*    text encoder, always frozen
    prompts.vrm.*            visual refine module
    head.*                   patch or slide classifier
"""

import logging
from dataclasses import dataclass, field
from enum import StrEnum

import torch
import torch.nn as nn

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_backbone.models import PromptedViT, images_to_tensor
from prompt_vit_commons.exceptions import ConfigurationException, InputException
from prompt_vit_commons.seeding import derive_seed
from prompt_vit_heads.models import PatchHead, WSIHead, wsi_aggregate
from prompt_vit_prompts.configs import PromptConfig
from prompt_vit_prompts.models import PromptBundle
from prompt_vit_prompts.text_encoders import TextEncoder

from .modes import TuningKind, TuningMode

logger = logging.getLogger(__name__)

LEVELS = ("patch", "wsi")


class ParamGroup(StrEnum):
    BACKBONE = "backbone"
    TVP = "tvp"
    TEXT_PROJECTION = "text_projection"
    TEXT_ENCODER = "text_encoder"
    VRM = "vrm"
    HEAD = "head"


_GROUP_PREFIXES = (
    ("backbone.", ParamGroup.BACKBONE),
    ("prompts.tvp.", ParamGroup.TVP),
    ("prompts.ttp.projection.", ParamGroup.TEXT_PROJECTION),
    ("prompts.ttp.encoder.", ParamGroup.TEXT_ENCODER),
    ("prompts.vrm.", ParamGroup.VRM),
    ("head.", ParamGroup.HEAD),
)


def parameter_group(name: str) -> ParamGroup:
    for prefix, group in _GROUP_PREFIXES:
        if name.startswith(prefix):
            return group
    raise ConfigurationException(f"parameter '{name}' belongs to no known group")


class AdaptationModel(nn.Module):
    def __init__(self, backbone: PromptedViT, prompts: PromptBundle, head: nn.Module, level: str = "patch"):
        super().__init__()
        if level not in LEVELS:
            raise ConfigurationException(f"Unknown level '{level}', expected one of {LEVELS}")
        self.backbone = backbone
        self.prompts = prompts
        self.head = head
        self.level = level

    @property
    def dtype(self) -> torch.dtype:
        return self.backbone.dtype

    def embed(self, images) -> torch.Tensor:
        """(B, C) final CLS states for a batch of images."""
        return self.backbone(images_to_tensor(images, self.dtype), self.prompts)

    def forward(self, images) -> torch.Tensor:
        """Patch level: (B, num_classes) logits."""
        if self.level != "patch":
            raise ConfigurationException("forward() is patch level; use forward_bag() for slide-level models")
        return self.head(self.embed(images))

    def forward_bag(self, patches) -> torch.Tensor:
        """Slide level: (num_classes,) logits for one bag of patches."""
        if self.level != "wsi":
            raise ConfigurationException("forward_bag() needs a slide-level model")
        if len(patches) == 0:
            raise InputException("cannot classify an empty bag")
        return wsi_aggregate(self.embed(patches), self.head)


def build_model(
    model_config: ModelConfig,
    prompt_config: PromptConfig,
    mode: TuningMode,
    level: str = "patch",
    seed: int = 0,
    encoder: TextEncoder | None = None,
    encoder_name: str = "hashed-trigram",
    encoder_dim: int = 768,
) -> AdaptationModel:
    """
    Construct the model for one tuning mode. Disabled prompt families get a zero
    token count, so they are neither built nor inserted into the sequence.

    Every component draws its initialization from a seed derived from `seed`.
    """
    effective = mode.effective_prompts(prompt_config)
    torch.manual_seed(derive_seed(seed, "init:backbone"))
    backbone = PromptedViT(model_config)
    torch.manual_seed(derive_seed(seed, "init:prompts"))
    prompts = PromptBundle(
        effective,
        layers=model_config.layers,
        dim=model_config.dim,
        image_size=model_config.image_size,
        encoder=encoder,
        encoder_name=encoder_name,
        encoder_dim=encoder_dim,
        seed=derive_seed(seed, "init:tvp") & 0xFFFF_FFFF,
    )
    torch.manual_seed(derive_seed(seed, "init:head"))
    if level == "wsi":
        head: nn.Module = WSIHead(model_config.dim, model_config.num_classes)
    else:
        head = PatchHead(model_config.dim, model_config.num_classes)
    model = AdaptationModel(backbone, prompts, head, level=level)
    counts = (effective.tvp_tokens, effective.ttp_tokens, effective.ivp_tokens)
    logger.debug(f"Built {mode.label} model ({level}), N/T/M = {counts}")
    return model


@dataclass
class ParamPartition:
    """Exhaustive, disjoint split of a model's named parameters."""

    frozen: dict[str, nn.Parameter] = field(default_factory=dict)
    trainable: dict[str, nn.Parameter] = field(default_factory=dict)

    def __post_init__(self):
        overlap = set(self.frozen) & set(self.trainable)
        if overlap:
            raise ConfigurationException(f"parameters both frozen and trainable: {sorted(overlap)}")

    def names(self, group: ParamGroup, trainable: bool | None = None) -> list[str]:
        pools = {True: [self.trainable], False: [self.frozen], None: [self.frozen, self.trainable]}[trainable]
        return sorted(name for pool in pools for name in pool if parameter_group(name) == group)

    def numel(self, trainable: bool | None = None, exclude: tuple[ParamGroup, ...] = ()) -> int:
        pools = {True: [self.trainable], False: [self.frozen], None: [self.frozen, self.trainable]}[trainable]
        return sum(
            param.numel() for pool in pools for name, param in pool.items() if parameter_group(name) not in exclude
        )


def trainable_groups(mode: TuningMode) -> set[ParamGroup]:
    if mode.kind == TuningKind.LINEAR_PROBE:
        return {ParamGroup.HEAD}
    if mode.kind == TuningKind.FULL_FINETUNE:
        return set(ParamGroup) - {ParamGroup.TEXT_ENCODER}
    groups = {ParamGroup.HEAD}
    if mode.tvp_on:
        groups.add(ParamGroup.TVP)
    if mode.ttp_on:
        groups.add(ParamGroup.TEXT_PROJECTION)
    if mode.ivp_on:
        groups.add(ParamGroup.VRM)
    return groups


def partition_params(model: AdaptationModel, mode: TuningMode) -> ParamPartition:
    """
    Split parameters into frozen and trainable sets and set `requires_grad` to match.
    The text encoder is frozen in every mode.
    """
    groups = trainable_groups(mode)
    partition = ParamPartition()
    for name, param in model.named_parameters():
        is_trainable = parameter_group(name) in groups
        param.requires_grad_(is_trainable)
        (partition.trainable if is_trainable else partition.frozen)[name] = param
    return partition


def count_trainable_fraction(partition: ParamPartition) -> float:
    """Trainable parameters over all parameters except the frozen text encoder."""
    denominator = partition.numel(exclude=(ParamGroup.TEXT_ENCODER,))
    if denominator == 0:
        return 0.0
    return partition.numel(trainable=True, exclude=(ParamGroup.TEXT_ENCODER,)) / denominator
