"""
Frozen text encoders for the textual prompts

The default encoder hashes character trigrams (scikit-learn HashingVectorizer) and maps
the bag through a fixed, seeded random matrix. A pretrained encoder from the optional
`transformers` extra can be plugged in with `huggingface:<model-name>`.
"""

import logging

import numpy as np
import torch
import torch.nn as nn
from sklearn.feature_extraction.text import HashingVectorizer

from prompt_vit_commons.exceptions import ConfigurationException, InputException

logger = logging.getLogger(__name__)

HASH_BUCKETS = 2048


class TextEncoder(nn.Module):
    """Frozen text -> pooled feature vector."""

    feature_dim: int

    def freeze(self) -> None:
        for param in self.parameters():
            param.requires_grad_(False)

    def encode(self, text: str) -> torch.Tensor:
        raise NotImplementedError


class HashedTrigramEncoder(TextEncoder):
    def __init__(self, feature_dim: int = 768, seed: int = 0, buckets: int = HASH_BUCKETS):
        super().__init__()
        self.feature_dim = feature_dim
        self.vectorizer = HashingVectorizer(
            analyzer="char",
            ngram_range=(3, 3),
            n_features=buckets,
            alternate_sign=False,
            norm="l2",
            lowercase=True,
        )
        generator = torch.Generator().manual_seed(seed)
        self.weight = nn.Parameter(torch.randn(buckets, feature_dim, generator=generator), requires_grad=False)

    def encode(self, text: str) -> torch.Tensor:
        bag = self.vectorizer.transform([f" {text} "]).toarray()[0].astype(np.float64)
        return torch.from_numpy(bag).to(self.weight.dtype) @ self.weight


class HuggingFaceTextEncoder(TextEncoder):
    """Mean-pooled last hidden state of a pretrained bidirectional encoder."""

    def __init__(self, model_name: str):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ConfigurationException(
                "ttp.encoder 'huggingface:*' needs the optional 'text' extra (transformers)"
            ) from exc
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.model.eval()
        self.feature_dim = self.model.config.hidden_size
        logger.info(f"Loaded text encoder {model_name} ({self.feature_dim}-d)")

    def encode(self, text: str) -> torch.Tensor:
        batch = self.tokenizer([text], return_tensors="pt", padding=True, truncation=True)
        hidden = self.model(**batch).last_hidden_state[0]
        mask = batch["attention_mask"][0].unsqueeze(-1).to(hidden.dtype)
        return (hidden * mask).sum(dim=0) / mask.sum()


def build_text_encoder(name: str, feature_dim: int = 768, seed: int = 0) -> TextEncoder:
    if name == "hashed-trigram":
        encoder: TextEncoder = HashedTrigramEncoder(feature_dim=feature_dim, seed=seed)
    elif name.startswith("huggingface:"):
        encoder = HuggingFaceTextEncoder(name.split(":", 1)[1])
    else:
        raise ConfigurationException(f"Unknown text encoder '{name}'")
    encoder.freeze()
    return encoder


def encode_text(text: str, encoder: TextEncoder) -> torch.Tensor:
    """
    Args:
        text: rendered prompt text
        encoder: frozen text encoder

    Returns:
        torch.Tensor: (feature_dim,) feature, detached from the encoder
    """
    if not text or not text.strip():
        raise InputException("text to encode is empty")
    with torch.no_grad():
        return encoder.encode(text).detach()
