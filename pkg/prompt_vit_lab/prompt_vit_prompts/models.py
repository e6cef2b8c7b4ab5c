"""
Prompt families

- TVP: learnable N x C matrices, one per transformer layer
- TTP: template -> frozen text encoder -> tunable text projection -> T x C
- IVP: image -> visual refine module -> one C-vector replicated M times
"""

import logging
import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import repeat

from prompt_vit_backbone.models import normalize_pixels
from prompt_vit_commons.exceptions import ConfigurationException, ShapeException

from .configs import PromptConfig, render_template
from .text_encoders import TextEncoder, build_text_encoder, encode_text

logger = logging.getLogger(__name__)

VRM_WIDTHS = (16, 32, 64, 64)


def init_tvp(layers: int, tokens: int, dim: int, seed: int) -> torch.Tensor:
    """
    Draw L matrices of N x C uniformly from [-r, r], r = sqrt(6 / (C + N)).

    Returns:
        torch.Tensor: (L, N, C)
    """
    generator = torch.Generator().manual_seed(seed)
    bound = math.sqrt(6.0 / (dim + tokens)) if dim + tokens > 0 else 0.0
    return (torch.rand(layers, tokens, dim, generator=generator) * 2.0 - 1.0) * bound


def project_text(feature: torch.Tensor, projection: nn.Linear, tokens: int, dim: int) -> torch.Tensor:
    """Affine map of the pooled text feature to T rows of width C."""
    if feature.shape[-1] != projection.in_features:
        raise ShapeException(
            f"text feature width {feature.shape[-1]} does not match projection input {projection.in_features}"
        )
    if projection.out_features != tokens * dim:
        raise ShapeException(f"projection emits {projection.out_features} values, expected {tokens} x {dim}")
    return projection(feature).reshape(tokens, dim)


def replicate_ivp(embedding: torch.Tensor, tokens: int) -> torch.Tensor:
    """(B, C) or (C,) embedding -> (B, M, C) with M identical rows."""
    if tokens < 0:
        raise ConfigurationException(f"ivp token count must be >= 0, got {tokens}")
    if embedding.dim() == 1:
        embedding = embedding.unsqueeze(0)
    return repeat(embedding, "b c -> b m c", m=tokens)


class TaskVisualPrompts(nn.Module):
    def __init__(self, layers: int, tokens: int, dim: int, seed: int = 0):
        super().__init__()
        self.prompts = nn.Parameter(init_tvp(layers, tokens, dim, seed))

    def forward(self, layer_index: int) -> torch.Tensor:
        return self.prompts[layer_index]


class TextualPromptGenerator(nn.Module):
    """
    Textual prompts for one (stain, task) pair.

    The encoder output is constant per pair, so it is computed once and kept as a
    buffer; only the projection runs per forward pass.
    """

    def __init__(self, encoder: TextEncoder, text: str, tokens: int, dim: int):
        super().__init__()
        self.tokens = tokens
        self.dim = dim
        self.encoder = encoder
        self.register_buffer("text_feature", encode_text(text, encoder))
        self.projection = nn.Linear(encoder.feature_dim, tokens * dim)

    def forward(self) -> torch.Tensor:
        return project_text(self.text_feature, self.projection, self.tokens, self.dim)


class VisualRefineModule(nn.Module):
    """Normalization-free stride-2 conv stack -> global average pool -> linear to C."""

    def __init__(self, image_size: int, dim: int, in_channels: int = 3, widths: tuple[int, ...] = VRM_WIDTHS):
        super().__init__()
        self.image_size = image_size
        self.in_channels = in_channels
        convs = []
        previous = in_channels
        for width in widths:
            convs.append(nn.Conv2d(previous, width, kernel_size=3, stride=2, padding=1))
            previous = width
        self.convs = nn.ModuleList(convs)
        self.head = nn.Linear(previous, dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return vrm_forward(images, self)


def vrm_forward(images: torch.Tensor, vrm: VisualRefineModule) -> torch.Tensor:
    """
    Args:
        images: (B, 3, H, W), H = W = the VRM's configured image size

    Returns:
        torch.Tensor: (B, C) coarse-grained embedding per image
    """
    expected = (vrm.in_channels, vrm.image_size, vrm.image_size)
    if tuple(images.shape[1:]) != expected:
        raise ConfigurationException(
            f"VRM input size mismatch: expected {expected[1]}x{expected[2]}, got {images.shape[2]}x{images.shape[3]}"
        )
    x = normalize_pixels(images.to(vrm.head.weight.dtype))
    for conv in vrm.convs:
        x = F.gelu(conv(x))
    return vrm.head(x.mean(dim=(2, 3)))


class PromptBundle(nn.Module):
    """
    All tunable prompt parameters of one adapted model.

    Families with a zero token count are not built at all.
    """

    def __init__(
        self,
        config: PromptConfig,
        layers: int,
        dim: int,
        image_size: int,
        encoder: TextEncoder | None = None,
        encoder_name: str = "hashed-trigram",
        encoder_dim: int = 768,
        seed: int = 0,
    ):
        super().__init__()
        self.config = config
        self.dim = dim
        self.layers = layers

        self.tvp = TaskVisualPrompts(layers, config.tvp_tokens, dim, seed=seed) if config.tvp_tokens > 0 else None

        self.ttp = None
        if config.ttp_tokens > 0:
            encoder = encoder or build_text_encoder(encoder_name, feature_dim=encoder_dim, seed=seed)
            text = render_template(config)
            logger.debug(f"Textual prompt text: {text!r}")
            self.ttp = TextualPromptGenerator(encoder, text, config.ttp_tokens, dim)

        self.vrm = VisualRefineModule(image_size, dim) if config.ivp_tokens > 0 else None

        self.register_buffer("empty_rows", torch.zeros(0, dim), persistent=False)

    def layer_prompts(self, layer_index: int) -> torch.Tensor:
        if self.tvp is None:
            return self.empty_rows
        return self.tvp(layer_index)

    def textual_prompts(self) -> torch.Tensor:
        if self.ttp is None:
            return self.empty_rows
        return self.ttp()

    def instance_prompts(self, images: torch.Tensor) -> torch.Tensor:
        if self.vrm is None:
            return self.empty_rows.unsqueeze(0).expand(images.shape[0], -1, -1)
        return replicate_ivp(self.vrm(images), self.config.ivp_tokens)
