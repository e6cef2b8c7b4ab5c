"""
Prompt-aware Vision Transformer backbone

Pre-LN transformer blocks over [CLS, prompts..., PATCH] token sequences. Positional
embeddings are added to CLS and PATCH rows only; prompts carry none.
"""

import logging
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange
from einops.layers.torch import Rearrange

from prompt_vit_commons.exceptions import ConfigurationException, ShapeException

from .configs import ModelConfig
from .tokens import TokenRole, TokenSequence, assemble_first_input, reprompt

logger = logging.getLogger(__name__)

# Pixels in [0, 1] are centred and scaled before any learned layer sees them.
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


class PromptProvider(Protocol):
    """Anything that can hand prompts to the backbone (see prompt_vit_prompts.models.PromptBundle)."""

    def layer_prompts(self, layer_index: int) -> torch.Tensor: ...

    def textual_prompts(self) -> torch.Tensor: ...

    def instance_prompts(self, images: torch.Tensor) -> torch.Tensor: ...


def normalize_pixels(images: torch.Tensor) -> torch.Tensor:
    return (images - PIXEL_MEAN) / PIXEL_STD


def images_to_tensor(images, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Convert H x W x 3 arrays (or a batch of them) in [0, 1] to a (B, 3, H, W) tensor.
    Tensors already in (B, 3, H, W) layout pass through with a dtype cast.
    """
    if isinstance(images, torch.Tensor):
        tensor = images
        if tensor.dim() == 3:
            tensor = tensor.unsqueeze(0)
        if tensor.shape[1] != 3 and tensor.shape[-1] == 3:
            tensor = rearrange(tensor, "b h w c -> b c h w")
        return tensor.to(dtype)
    array = np.asarray(images)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4 or array.shape[-1] != 3:
        raise ShapeException(f"expected H x W x 3 image(s), got shape {array.shape}")
    return torch.from_numpy(rearrange(array, "b h w c -> b c h w").copy()).to(dtype)


class Attention(nn.Module):
    """Full multi-head self-attention; every row attends to every row."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(x), "b n (three h d) -> three b h n d", three=3, h=self.heads)
        attn = (torch.matmul(q, k.transpose(-1, -2)) * self.scale).softmax(dim=-1)
        out = rearrange(torch.matmul(attn, v), "b h n d -> b n (h d)")
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerLayer(nn.Module):
    """Pre-LN block: x + Attn(LN(x)), then + MLP(LN(.))."""

    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


def transformer_layer(seq: TokenSequence, layer: TransformerLayer) -> TokenSequence:
    if seq.width != layer.norm1.normalized_shape[0]:
        raise ShapeException(f"sequence width {seq.width} does not match layer width {layer.norm1.normalized_shape[0]}")
    return seq.with_tokens(layer(seq.tokens))


class PromptedViT(nn.Module):
    """Backbone parameters: patch embedding, positional embeddings (1 + K), CLS token, L blocks, final norm."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.to_patches = Rearrange(
            "b c (h p1) (w p2) -> b (h w) (p1 p2 c)", p1=config.patch_size, p2=config.patch_size
        )
        self.patch_embed = nn.Linear(config.patch_dim, config.dim)
        self.cls_token = nn.Parameter(torch.zeros(config.dim))
        self.pos_embed = nn.Parameter(torch.zeros(1 + config.num_patches, config.dim))
        self.layers = nn.ModuleList(
            [TransformerLayer(config.dim, config.heads, config.mlp_dim) for _ in range(config.layers)]
        )
        self.norm = nn.LayerNorm(config.dim)

        self._init_parameters()

    @staticmethod
    def _init_module(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.trunc_normal_(module.weight, mean=0.0, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)

    def _init_parameters(self) -> None:
        self.apply(self._init_module)
        nn.init.trunc_normal_(self.cls_token, mean=0.0, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, mean=0.0, std=0.02)

    @property
    def dtype(self) -> torch.dtype:
        return self.cls_token.dtype

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """
        Args:
            images: (B, 3, H, W) in [0, 1]

        Returns:
            torch.Tensor: (B, K, C) patch tokens, positional embeddings added
        """
        expected = (self.config.in_channels, self.config.image_size, self.config.image_size)
        if tuple(images.shape[1:]) != expected:
            raise ConfigurationException(
                f"image size mismatch: expected {expected[1]}x{expected[2]}x{expected[0]}, "
                f"got {images.shape[2]}x{images.shape[3]}x{images.shape[1]}"
            )
        patches = self.patch_embed(self.to_patches(normalize_pixels(images.to(self.dtype))))
        return patches + self.pos_embed[1:]

    def cls_input(self) -> torch.Tensor:
        return self.cls_token + self.pos_embed[0]

    def forward(self, images: torch.Tensor, prompts: PromptProvider | None = None) -> torch.Tensor:
        """
        Prompted forward pass.

        Layer 1 consumes [CLS, TVP^0, TTP, IVP, PATCH]; layer l >= 2 consumes
        [CLS, TVP^(l-1), PATCH] built from the previous layer's CLS and PATCH rows.

        Returns:
            torch.Tensor: (B, C) final layer-normalized CLS state V^L
        """
        if prompts is None:
            return self.forward_plain(images)

        patches = self.patchify(images)
        seq = assemble_first_input(
            self.cls_input(),
            prompts.layer_prompts(0),
            prompts.textual_prompts(),
            prompts.instance_prompts(images),
            patches,
        )
        seq = transformer_layer(seq, self.layers[0])
        for index in range(1, len(self.layers)):
            seq = reprompt(seq, prompts.layer_prompts(index))
            seq = transformer_layer(seq, self.layers[index])
        return self.norm(seq.rows(TokenRole.CLS)[:, 0])

    def forward_plain(self, images: torch.Tensor) -> torch.Tensor:
        """Promptless ViT path over [CLS, PATCH]."""
        patches = self.patchify(images)
        cls = self.cls_input().reshape(1, 1, -1).expand(patches.shape[0], -1, -1)
        hidden = torch.cat([cls, patches], dim=1)
        for layer in self.layers:
            hidden = layer(hidden)
        return self.norm(hidden[:, 0])
