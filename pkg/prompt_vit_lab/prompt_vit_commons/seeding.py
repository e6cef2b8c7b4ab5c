"""
Seed derivation

All randomness in a run flows from one root seed. Components derive their own
seeds as stable functions of (root seed, component name, index) so grid cells and
per-image generation can run in any order or process and still agree.
"""

import hashlib

import numpy as np
import torch


def derive_seed(root_seed: int, component: str, index: int = 0) -> int:
    """
    Args:
        root_seed: run-level seed from the experiment config
        component: stable component name (e.g. "split", "init", "cell:LP")
        index: repeat / instance index

    Returns:
        int: 63-bit non-negative seed
    """
    digest = hashlib.blake2b(f"{root_seed}:{component}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_rng(root_seed: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, component, index))


def torch_generator(root_seed: int, component: str, index: int = 0) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(root_seed, component, index))
    return generator
