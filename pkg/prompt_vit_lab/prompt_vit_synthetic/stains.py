"""
Stain color model

Pixels are generated as stain concentrations (hematoxylin-like, eosin/DAB-like,
residual) and colored by an affine map rgb = M @ c + offset, clipped to [0, 1].
Each instance gets its own M and offset, drawn around a family base.
"""

from dataclasses import dataclass

import numpy as np

from prompt_vit_commons.exceptions import ShapeException

from .configs import StainFamily

# Columns are the RGB response of one unit of each stain.
BASE_MATRICES = {
    StainFamily.HE_LIKE: np.array(
        [
            [-0.70, -0.05, -0.10],
            [-0.80, -0.55, -0.10],
            [-0.45, -0.30, -0.10],
        ]
    ),
    StainFamily.IHC_LIKE: np.array(
        [
            [-0.60, -0.25, -0.10],
            [-0.50, -0.55, -0.10],
            [-0.20, -0.80, -0.10],
        ]
    ),
}
BASE_OFFSET = np.ones(3)


@dataclass(frozen=True)
class StainParams:
    matrix: np.ndarray  # (3, 3)
    offset: np.ndarray  # (3,)

    def __post_init__(self):
        if np.shape(self.matrix) != (3, 3) or np.shape(self.offset) != (3,):
            raise ShapeException(
                f"stain needs a 3x3 matrix and 3 offsets, got {np.shape(self.matrix)} and {np.shape(self.offset)}"
            )

    @classmethod
    def identity(cls) -> "StainParams":
        return cls(np.eye(3), np.zeros(3))


def base_stain(family: StainFamily) -> StainParams:
    return StainParams(BASE_MATRICES[StainFamily(family)].copy(), BASE_OFFSET.copy())


def sample_stain(family: StainFamily, strength: float, rng: np.random.Generator) -> StainParams:
    """Base matrix + strength * N(0, 1); offset + strength / 4 * N(0, 1). strength 0 gives the base exactly."""
    base = base_stain(family)
    matrix = base.matrix + strength * rng.standard_normal((3, 3))
    offset = base.offset + 0.25 * strength * rng.standard_normal(3)
    return StainParams(matrix, offset)


def apply_stain_transform(image: np.ndarray, stain: StainParams) -> np.ndarray:
    """
    Args:
        image: H x W x 3 values in [0, 1]
        stain: color map

    Returns:
        np.ndarray: H x W x 3, clip(image @ M^T + offset, 0, 1)
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ShapeException(f"expected an H x W x 3 image, got shape {image.shape}")
    return np.clip(image @ np.asarray(stain.matrix).T + np.asarray(stain.offset), 0.0, 1.0)
