"""
Role-tagged token sequences

Layer 1 sees [CLS, TVP x N, TTP x T, IVP x M, PATCH x K]; every deeper layer sees
[CLS, TVP x N, PATCH x K] with the TVP rows replaced by that layer's prompts.
"""

from dataclasses import dataclass
from enum import IntEnum

import torch

from prompt_vit_commons.exceptions import ShapeException


class TokenRole(IntEnum):
    """Row roles, in the only order they may appear."""

    CLS = 0
    TVP = 1
    TTP = 2
    IVP = 3
    PATCH = 4


@dataclass(frozen=True)
class TokenSequence:
    tokens: torch.Tensor  # (B, rows, C)
    roles: tuple[TokenRole, ...]

    def __post_init__(self):
        if self.tokens.dim() != 3:
            raise ShapeException(f"tokens must be (batch, rows, width), got shape {tuple(self.tokens.shape)}")
        if len(self.roles) != self.tokens.shape[1]:
            raise ShapeException(f"{len(self.roles)} roles for {self.tokens.shape[1]} token rows")
        if not self.roles or self.roles[0] != TokenRole.CLS or self.roles.count(TokenRole.CLS) != 1:
            raise ShapeException("sequence must hold exactly one CLS row, first")
        if any(later < earlier for earlier, later in zip(self.roles, self.roles[1:], strict=False)):
            raise ShapeException("token roles out of order")

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]

    def __len__(self) -> int:
        return len(self.roles)

    def span(self, role: TokenRole) -> slice:
        """Row slice holding `role` (empty slice when absent)."""
        start = next((i for i, r in enumerate(self.roles) if r == role), None)
        if start is None:
            return slice(0, 0)
        return slice(start, start + self.roles.count(role))

    def rows(self, role: TokenRole) -> torch.Tensor:
        return self.tokens[:, self.span(role)]

    def count(self, role: TokenRole) -> int:
        return self.roles.count(role)

    def with_tokens(self, tokens: torch.Tensor) -> "TokenSequence":
        return TokenSequence(tokens=tokens, roles=self.roles)


def _as_batched(block: torch.Tensor, name: str, batch: int, width: int) -> torch.Tensor:
    """Broadcast a shared (rows, C) block, or check a per-instance (B, rows, C) block."""
    if block.dim() == 1:
        block = block.unsqueeze(0)
    if block.shape[-1] != width:
        raise ShapeException(f"{name} width {block.shape[-1]} does not match token width {width}")
    if block.dim() == 2:
        return block.unsqueeze(0).expand(batch, -1, -1)
    if block.dim() == 3 and block.shape[0] == batch:
        return block
    raise ShapeException(f"{name} has shape {tuple(block.shape)}, expected (rows, {width}) or ({batch}, rows, {width})")


def assemble_first_input(
    cls: torch.Tensor,
    tvp0: torch.Tensor,
    ttp: torch.Tensor,
    ivp: torch.Tensor,
    patches: torch.Tensor,
) -> TokenSequence:
    """
    Build the layer-1 input [CLS, TVP^0, TTP, IVP, PATCH].

    Args:
        cls: (C,) or (B, C) class token, positional embedding already added
        tvp0: (N, C) first-layer task visual prompts
        ttp: (T, C) textual prompts
        ivp: (B, M, C) or (M, C) instance prompts
        patches: (B, K, C) patch tokens with positional embeddings

    Returns:
        TokenSequence: 1 + N + T + M + K rows
    """
    if patches.dim() == 2:
        patches = patches.unsqueeze(0)
    batch, _, width = patches.shape
    if cls.shape[-1] != width:
        raise ShapeException(f"cls width {cls.shape[-1]} does not match token width {width}")
    cls_rows = cls.reshape(1, 1, width).expand(batch, -1, -1) if cls.dim() == 1 else cls.reshape(batch, 1, width)
    blocks = [
        (TokenRole.CLS, cls_rows),
        (TokenRole.TVP, _as_batched(tvp0, "tvp", batch, width)),
        (TokenRole.TTP, _as_batched(ttp, "ttp", batch, width)),
        (TokenRole.IVP, _as_batched(ivp, "ivp", batch, width)),
        (TokenRole.PATCH, patches),
    ]
    roles: list[TokenRole] = []
    for role, block in blocks:
        roles.extend([role] * block.shape[1])
    tokens = torch.cat([block for _, block in blocks], dim=1)
    return TokenSequence(tokens=tokens, roles=tuple(roles))


def reprompt(layer_output: TokenSequence, tvp_l: torch.Tensor) -> TokenSequence:
    """Keep CLS and PATCH rows, drop every prompt row, insert fresh TVP rows."""
    if layer_output.count(TokenRole.PATCH) == 0:
        raise ShapeException("layer output holds no PATCH rows")
    batch, width = layer_output.tokens.shape[0], layer_output.width
    tvp = _as_batched(tvp_l, "tvp", batch, width)
    cls = layer_output.rows(TokenRole.CLS)
    patches = layer_output.rows(TokenRole.PATCH)
    roles = (TokenRole.CLS,) + (TokenRole.TVP,) * tvp.shape[1] + (TokenRole.PATCH,) * patches.shape[1]
    return TokenSequence(tokens=torch.cat([cls, tvp, patches], dim=1), roles=roles)
