import tempfile
from collections import Counter
from pathlib import Path
from unittest import TestCase

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from prompt_vit_commons.exceptions import ConfigurationException, ErrorCode, InputException, NotFoundException
from prompt_vit_commons.seeding import numpy_rng

from .configs import StainFamily, SynthSpec
from .generators import generate_patch_dataset, generate_wsi_bags, hue_spread, make_patch
from .models import LabeledBag, LabeledPatch
from .sources import DatasetSource, materialize
from .stains import StainParams, apply_stain_transform, base_stain, sample_stain
from .storage import load_dataset, write_dataset


def patch(label: int, instance_id: str = "p") -> LabeledPatch:
    return LabeledPatch(image=np.zeros((4, 4, 3), dtype=np.float32), label=label, instance_id=instance_id)


class SynthSpecTests(TestCase):
    def test_invalid_recipes(self):
        with self.assertRaises(ConfigurationException):
            SynthSpec(num_classes=1)
        with self.assertRaises(ConfigurationException):
            SynthSpec(samples_per_class=0)
        with self.assertRaises(ConfigurationException):
            SynthSpec(stain_family="PAS")

    def test_stain_family_from_string(self):
        spec = SynthSpec(stain_family="IHC_LIKE")

        self.assertEqual(spec.stain_family, StainFamily.IHC_LIKE)
        self.assertEqual(spec.stain_name, "IHC")
        self.assertEqual(spec.to_dict()["stain_family"], "IHC_LIKE")


class StainTransformTests(TestCase):
    def setUp(self):
        self.image = np.random.default_rng(0).random((5, 6, 3))

    def test_identity(self):
        np.testing.assert_array_equal(apply_stain_transform(self.image, StainParams.identity()), self.image)

    def test_zero_matrix_unit_offset_saturates(self):
        stain = StainParams(np.zeros((3, 3)), np.ones(3))

        np.testing.assert_array_equal(apply_stain_transform(self.image, stain), np.ones_like(self.image))

    def test_hand_computed_pixel(self):
        stain = StainParams(np.array([[1.0, 0.0, 0.5], [0.0, 0.5, 0.0], [0.2, 0.0, 2.0]]), np.array([0.1, 0.0, -0.2]))
        pixel = np.array([[[0.2, 0.4, 0.3]]])

        # r = 0.2 + 0.15 + 0.1, g = 0.2, b = 0.04 + 0.6 - 0.2
        np.testing.assert_allclose(apply_stain_transform(pixel, stain)[0, 0], [0.45, 0.2, 0.44], atol=1e-12)

    def test_output_clipped(self):
        stain = StainParams(np.eye(3) * 4.0, np.full(3, -1.0))
        out = apply_stain_transform(self.image, stain)

        self.assertGreaterEqual(out.min(), 0.0)
        self.assertLessEqual(out.max(), 1.0)

    def test_zero_strength_gives_base(self):
        stain = sample_stain(StainFamily.HE_LIKE, 0.0, np.random.default_rng(3))

        np.testing.assert_array_equal(stain.matrix, base_stain(StainFamily.HE_LIKE).matrix)
        np.testing.assert_array_equal(stain.offset, np.ones(3))

    def test_bad_shapes(self):
        with self.assertRaises(ConfigurationException):
            StainParams(np.eye(2), np.zeros(3))


class PatchGenerationTests(TestCase):
    def test_counts_and_balance(self):
        patches = generate_patch_dataset(SynthSpec(num_classes=4, samples_per_class=25, image_size=16))

        self.assertEqual(len(patches), 100)
        self.assertEqual(Counter(p.label for p in patches), {0: 25, 1: 25, 2: 25, 3: 25})
        self.assertEqual(len({p.instance_id for p in patches}), 100)
        self.assertEqual(patches[0].image.shape, (16, 16, 3))
        self.assertEqual(patches[0].image.dtype, np.float32)

    def test_same_seed_pixel_identical(self):
        spec = SynthSpec(num_classes=2, samples_per_class=3, image_size=16, seed=11)
        first, second = generate_patch_dataset(spec), generate_patch_dataset(spec)
        other = generate_patch_dataset(SynthSpec(num_classes=2, samples_per_class=3, image_size=16, seed=12))

        for a, b in zip(first, second, strict=True):
            np.testing.assert_array_equal(a.image, b.image)
        self.assertFalse(np.array_equal(first[0].image, other[0].image))

    def test_values_on_the_8bit_grid(self):
        image = generate_patch_dataset(SynthSpec(num_classes=2, samples_per_class=1, image_size=16))[0].image

        self.assertGreaterEqual(float(image.min()), 0.0)
        self.assertLessEqual(float(image.max()), 1.0)
        np.testing.assert_allclose(image * 255.0, np.round(image * 255.0), atol=1e-3)

    def test_stain_gap_widens_hue_spread(self):
        common = {"num_classes": 2, "samples_per_class": 20, "image_size": 16, "seed": 0}
        calm = generate_patch_dataset(SynthSpec(instance_gap_strength=0.0, **common))
        varied = generate_patch_dataset(SynthSpec(instance_gap_strength=0.3, **common))

        self.assertGreater(hue_spread([p.image for p in varied]), hue_spread([p.image for p in calm]))

    def test_no_stain_gap_means_same_color_for_same_content(self):
        spec = SynthSpec(num_classes=2, samples_per_class=1, image_size=16, instance_gap_strength=0.0)
        images = [
            make_patch(1, spec, numpy_rng(0, "content", 7), numpy_rng(stain_seed, "stain", 0), "p").image
            for stain_seed in range(5)
        ]

        means = np.array([image.reshape(-1, 3).mean(axis=0) for image in images])
        self.assertLess(float(np.ptp(means, axis=0).max()), 1e-6)


class BagTests(TestCase):
    def test_max_grade_rule(self):
        self.assertEqual(LabeledBag.from_patches([patch(0), patch(0)], "s0").slide_label, 0)
        self.assertEqual(LabeledBag.from_patches([patch(0), patch(0), patch(3)], "s1").slide_label, 3)
        with self.assertRaises(InputException):
            LabeledBag(patches=[patch(0), patch(2)], slide_label=1, slide_id="s2")
        with self.assertRaises(InputException):
            LabeledBag.from_patches([], "s3")

    def test_generated_bags(self):
        bags = generate_wsi_bags(SynthSpec(num_classes=4, image_size=16, seed=2), (3, 6), num_bags=20)

        self.assertEqual(len(bags), 20)
        for bag in bags:
            self.assertTrue(3 <= len(bag.patches) <= 6)
            self.assertEqual(bag.slide_label, max(p.label for p in bag.patches))
            self.assertTrue(all(p.slide_id == bag.slide_id for p in bag.patches))

    def test_bag_size_range(self):
        spec = SynthSpec(image_size=16)
        with self.assertRaises(InputException):
            generate_wsi_bags(spec, (0, 3), num_bags=2)
        with self.assertRaises(ConfigurationException):
            generate_wsi_bags(spec, (4, 3), num_bags=2)


class StorageTests(TestCase):
    def test_patch_dataset_round_trip(self):
        spec = SynthSpec(num_classes=2, samples_per_class=3, image_size=16, seed=5)
        patches = generate_patch_dataset(spec)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_dataset(patches, Path(tmp) / "data", spec)
            loaded, loaded_spec = load_dataset(manifest.parent)
            header = manifest.read_text(encoding="utf-8").splitlines()[0]

        self.assertEqual(header, "path,label,slide_id")
        self.assertEqual(loaded_spec, spec)
        self.assertEqual([p.label for p in loaded], [p.label for p in patches])
        self.assertEqual([p.instance_id for p in loaded], [p.instance_id for p in patches])
        for a, b in zip(loaded, patches, strict=True):
            np.testing.assert_array_equal(a.image, b.image)

    def test_bag_dataset_round_trip(self):
        bags = generate_wsi_bags(SynthSpec(num_classes=3, image_size=16), (2, 4), num_bags=4)
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(bags, tmp)
            loaded, spec = load_dataset(tmp)

        self.assertIsNone(spec)
        self.assertEqual([(b.slide_id, b.slide_label, len(b.patches)) for b in loaded],
                         [(b.slide_id, b.slide_label, len(b.patches)) for b in bags])

    def test_missing_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(NotFoundException) as ctx:
                load_dataset(Path(tmp) / "absent")
        self.assertEqual(ctx.exception.error_code, ErrorCode.DATASET_NOT_FOUND)

    def test_level_mismatch(self):
        spec = SynthSpec(num_classes=2, samples_per_class=5, image_size=16)
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(generate_patch_dataset(spec), tmp, spec)
            with self.assertRaises(ConfigurationException):
                materialize(DatasetSource(path=tmp, spec=spec, level="wsi"))

    def test_source_round_trip(self):
        source = DatasetSource(name="ihc", spec=SynthSpec(stain_family="IHC_LIKE", image_size=16), level="wsi")

        self.assertEqual(DatasetSource.from_dict(source.to_dict()), source)


def radial_spectrum(image: np.ndarray) -> np.ndarray:
    """Per-channel radially binned FFT magnitude: invariant to stripe angle and phase."""
    size = image.shape[0]
    freq = np.fft.fftfreq(size) * size
    radius = np.rint(np.hypot(*np.meshgrid(freq, freq))).astype(int).ravel()
    features = []
    for channel in range(3):
        magnitude = np.abs(np.fft.fft2(image[..., channel])).ravel()
        features.append(np.bincount(radius, weights=magnitude)[: size // 2 + 1])
    return np.concatenate(features)


@pytest.mark.slow
class StainGapTests(TestCase):
    def test_classifier_trained_without_stain_gap_degrades_with_it(self):
        def features(strength: float, seed: int):
            patches = generate_patch_dataset(
                SynthSpec(num_classes=4, samples_per_class=60, instance_gap_strength=strength, seed=seed)
            )
            return np.stack([radial_spectrum(p.image) for p in patches]), np.array([p.label for p in patches])

        x_train, y_train = features(0.0, seed=0)
        oracle = make_pipeline(StandardScaler(), LogisticRegression(max_iter=5000)).fit(x_train, y_train)

        clean = oracle.score(*features(0.0, seed=1))
        stained = oracle.score(*features(0.3, seed=1))

        self.assertGreaterEqual(clean - stained, 0.05)
