"""
Tunable classification heads

PatchHead maps V^L to class logits. WSIHead pools the per-patch V^L of one slide with
gated attention and classifies the pooled embedding.
"""

import numpy as np
import torch
import torch.nn as nn

from prompt_vit_commons.exceptions import InputException, ShapeException


class PatchHead(nn.Module):
    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.linear = nn.Linear(dim, num_classes)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return patch_logits(v, self)


def patch_logits(v: torch.Tensor, head: PatchHead) -> torch.Tensor:
    if v.shape[-1] != head.linear.in_features:
        raise ShapeException(f"embedding width {v.shape[-1]} does not match head input {head.linear.in_features}")
    return head.linear(v)


def canonical_order(embeddings: torch.Tensor) -> np.ndarray:
    """Row indices sorting an (n, C) matrix lexicographically, first column first."""
    rows = embeddings.detach().cpu().numpy()
    return np.lexsort(rows.T[::-1]).astype(np.int64)


class WSIHead(nn.Module):
    """Gated attention MIL pooling: a = w^T (tanh(V h) * sigmoid(U h)), softmax over the bag."""

    def __init__(self, dim: int, num_classes: int, hidden_dim: int | None = None):
        super().__init__()
        hidden_dim = hidden_dim or max(dim // 2, 8)
        self.attention_a = nn.Sequential(nn.Linear(dim, hidden_dim), nn.Tanh())
        self.attention_b = nn.Sequential(nn.Linear(dim, hidden_dim), nn.Sigmoid())
        self.attention_c = nn.Linear(hidden_dim, 1)
        self.classifier = nn.Linear(dim, num_classes)

    def scores(self, embeddings: torch.Tensor) -> torch.Tensor:
        return self.attention_c(self.attention_a(embeddings) * self.attention_b(embeddings)).squeeze(-1)

    def pool(self, embeddings: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            embeddings: (n, C) per-patch CLS embeddings of one bag

        Returns:
            tuple: pooled (C,) embedding, attention weights (n,) in input order
        """
        if embeddings.dim() != 2 or embeddings.shape[0] == 0:
            raise InputException(f"bag embeddings must be a non-empty (n, C) matrix, got {tuple(embeddings.shape)}")
        if embeddings.shape[1] != self.classifier.in_features:
            raise ShapeException(
                f"embedding width {embeddings.shape[1]} does not match head input {self.classifier.in_features}"
            )
        # Rows are put in lexicographic order first, so the bits of the result do not
        # depend on the order the patches arrived in.
        order = torch.from_numpy(canonical_order(embeddings)).to(embeddings.device)
        ordered = embeddings[order]
        ordered_weights = self.scores(ordered).softmax(dim=0)
        pooled = ordered_weights @ ordered
        weights = torch.empty_like(ordered_weights).scatter(0, order, ordered_weights)
        return pooled, weights

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        return wsi_aggregate(embeddings, self)


def wsi_aggregate(embeddings, head: WSIHead) -> torch.Tensor:
    """Slide logits from a list (or (n, C) stack) of per-patch embeddings."""
    if isinstance(embeddings, list | tuple):
        if not embeddings:
            raise InputException("cannot aggregate an empty bag")
        embeddings = torch.stack(list(embeddings))
    pooled, _ = head.pool(embeddings)
    return head.classifier(pooled)
