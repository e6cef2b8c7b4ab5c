"""
Synthetic pathology patches and slides

Content is a class-dependent striation texture plus a few nuclei blobs; color comes
from a per-instance stain. Every image draws from its own derived seeds, so generation
order does not matter.
"""

import logging

import numpy as np
from scipy.stats import circmean, circvar
from skimage.color import rgb2hsv
from skimage.draw import disk
from skimage.filters import gaussian

from prompt_vit_commons.exceptions import ConfigurationException, InputException
from prompt_vit_commons.seeding import numpy_rng

from .configs import SynthSpec
from .models import LabeledBag, LabeledPatch
from .stains import StainParams, apply_stain_transform, sample_stain

logger = logging.getLogger(__name__)


def render_content(label: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Stain concentrations for one patch.

    Returns:
        np.ndarray: size x size x 3 in [0, 1] (hematoxylin, eosin/DAB, residual)
    """
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size] / size
    # Square-wave stripes along a random axis: every patch of the grid shows the
    # class frequency, and pixel energy is the same for all classes.
    axis = xx if rng.random() < 0.5 else yy
    phase = rng.uniform(0.0, 2.0 * np.pi)
    frequency = spec.texture_scale * (1 + label)
    stripes = (np.sin(2.0 * np.pi * frequency * axis + phase) >= 0.0).astype(np.float64)
    hematoxylin = 0.15 + 0.5 * stripes

    # nuclei
    for _ in range(int(rng.integers(1, 4))):
        center = (rng.uniform(0, size), rng.uniform(0, size))
        rr, cc = disk(center, rng.uniform(1.0, size / 16 + 1.0), shape=(size, size))
        hematoxylin[rr, cc] += 0.2

    eosin = 0.35 + 0.2 * gaussian(rng.random((size, size)), sigma=1.5)
    residual = 0.05 * rng.random((size, size))
    return np.clip(np.stack([hematoxylin, eosin, residual], axis=-1), 0.0, 1.0)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so images survive a PNG round trip unchanged."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def make_patch(
    label: int, spec: SynthSpec, content_rng: np.random.Generator, stain_rng: np.random.Generator, instance_id: str
) -> LabeledPatch:
    stain: StainParams = sample_stain(spec.stain_family, spec.instance_gap_strength, stain_rng)
    image = apply_stain_transform(render_content(label, spec, content_rng), stain)
    return LabeledPatch(image=quantize(image), label=label, instance_id=instance_id)


def generate_patch_dataset(spec: SynthSpec) -> list[LabeledPatch]:
    """num_classes * samples_per_class patches, labels cycling so classes stay balanced."""
    total = spec.num_classes * spec.samples_per_class
    patches = [
        make_patch(
            index % spec.num_classes,
            spec,
            numpy_rng(spec.seed, "content", index),
            numpy_rng(spec.seed, "stain", index),
            f"p{index:05d}",
        )
        for index in range(total)
    ]
    logger.info(f"Generated {total} patches ({spec.num_classes} classes, sigma={spec.instance_gap_strength})")
    return patches


def generate_wsi_bags(spec: SynthSpec, bag_size_range: tuple[int, int], num_bags: int) -> list[LabeledBag]:
    """
    Each bag picks a target grade, mixes grades up to it with bag-specific weights and
    holds at least one patch of the target grade; slide_label is therefore the target.
    """
    low, high = bag_size_range
    if low < 1:
        raise InputException(f"bag size minimum must be >= 1, got {low}")
    if high < low:
        raise ConfigurationException(f"bag size range is empty: [{low}, {high}]")
    if num_bags < 1:
        raise InputException(f"num_bags must be >= 1, got {num_bags}")

    bags = []
    for b in range(num_bags):
        rng = numpy_rng(spec.seed, "bag", b)
        size = int(rng.integers(low, high + 1))
        target = int(rng.integers(0, spec.num_classes))
        mixture = rng.dirichlet(np.ones(target + 1))
        grades = rng.choice(target + 1, size=size, p=mixture)
        grades[rng.integers(size)] = target
        slide_id = f"s{b:04d}"
        patches = []
        for j, grade in enumerate(grades):
            patch = make_patch(
                int(grade),
                spec,
                numpy_rng(spec.seed, f"{slide_id}:content", j),
                numpy_rng(spec.seed, f"{slide_id}:stain", j),
                f"{slide_id}_{j:03d}",
            )
            patch.slide_id = slide_id
            patches.append(patch)
        bags.append(LabeledBag.from_patches(patches, slide_id))
    logger.info(f"Generated {num_bags} bags of {low}-{high} patches")
    return bags


def mean_hues(images: list[np.ndarray]) -> np.ndarray:
    """Circular mean hue (in [0, 1)) of each image."""
    return np.array([circmean(rgb2hsv(np.asarray(image))[..., 0], high=1.0, low=0.0) for image in images])


def hue_spread(images: list[np.ndarray]) -> float:
    """Circular variance of the per-image mean hue across a set."""
    return float(circvar(mean_hues(images), high=1.0, low=0.0))
