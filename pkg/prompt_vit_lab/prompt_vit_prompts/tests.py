import math
from unittest import TestCase

import torch
from skimage.color import hsv2rgb, rgb2hsv

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_backbone.models import PromptedViT
from prompt_vit_commons.exceptions import ConfigurationException, InputException, ShapeException, TemplateException

from .configs import DEFAULT_TEMPLATE, PromptConfig, render_template
from .models import PromptBundle, VisualRefineModule, init_tvp, project_text, replicate_ivp, vrm_forward
from .text_encoders import HashedTrigramEncoder, build_text_encoder, encode_text


class TemplateTests(TestCase):
    def test_default_template_renders_stain_and_task(self):
        text = render_template(PromptConfig(stain="IHC", task="tumor grading"))

        self.assertEqual(text, "A patch image showing IHC pathology tissues for tumor grading")

    def test_missing_placeholder(self):
        with self.assertRaisesRegex(TemplateException, r"\{task\}"):
            PromptConfig(template="A patch image showing {stain} tissue")

    def test_duplicated_placeholder(self):
        with self.assertRaises(TemplateException):
            PromptConfig(template="{stain} {stain} {task}")

    def test_negative_counts(self):
        with self.assertRaises(ConfigurationException):
            PromptConfig(tvp_tokens=-1)

    def test_with_counts_keeps_text_inputs(self):
        config = PromptConfig(stain="IHC").with_counts(1, 0, 3)

        self.assertEqual((config.tvp_tokens, config.ttp_tokens, config.ivp_tokens), (1, 0, 3))
        self.assertEqual(config.stain, "IHC")
        self.assertEqual(config.template, DEFAULT_TEMPLATE)


class TextEncoderTests(TestCase):
    def test_hashed_encoder_is_deterministic_and_frozen(self):
        first = build_text_encoder("hashed-trigram", feature_dim=32, seed=3)
        second = build_text_encoder("hashed-trigram", feature_dim=32, seed=3)

        a = encode_text("HE tumor grading", first)
        b = encode_text("HE tumor grading", second)

        self.assertEqual(tuple(a.shape), (32,))
        self.assertTrue(torch.equal(a, b))
        self.assertFalse(any(p.requires_grad for p in first.parameters()))
        self.assertFalse(a.requires_grad)

    def test_different_stains_encode_differently(self):
        encoder = HashedTrigramEncoder(feature_dim=32)

        self.assertFalse(torch.allclose(encoder.encode("HE tissue"), encoder.encode("IHC tissue")))

    def test_empty_text(self):
        with self.assertRaises(InputException):
            encode_text("   ", HashedTrigramEncoder(feature_dim=8))

    def test_unknown_encoder(self):
        with self.assertRaises(ConfigurationException):
            build_text_encoder("word2vec")


class TaskVisualPromptTests(TestCase):
    def test_init_within_uniform_bound(self):
        prompts = init_tvp(layers=4, tokens=10, dim=64, seed=0)
        bound = math.sqrt(6.0 / (64 + 10))

        self.assertEqual(tuple(prompts.shape), (4, 10, 64))
        self.assertLessEqual(float(prompts.abs().max()), bound)
        self.assertGreater(float(prompts.abs().max()), 0.5 * bound)

    def test_init_is_seeded(self):
        self.assertTrue(torch.equal(init_tvp(2, 3, 8, seed=5), init_tvp(2, 3, 8, seed=5)))
        self.assertFalse(torch.equal(init_tvp(2, 3, 8, seed=5), init_tvp(2, 3, 8, seed=6)))


class TextualPromptTests(TestCase):
    def test_projection_shape(self):
        projection = torch.nn.Linear(32, 2 * 16)

        rows = project_text(torch.randn(32), projection, tokens=2, dim=16)

        self.assertEqual(tuple(rows.shape), (2, 16))

    def test_projection_width_mismatch(self):
        with self.assertRaises(ShapeException):
            project_text(torch.randn(30), torch.nn.Linear(32, 32), tokens=2, dim=16)

    def test_bundle_textual_prompts_depend_only_on_projection(self):
        bundle = PromptBundle(PromptConfig(tvp_tokens=0, ttp_tokens=3, ivp_tokens=0), 2, 16, 16, encoder_dim=32)

        rows = bundle.textual_prompts()
        rows.sum().backward()

        self.assertEqual(tuple(rows.shape), (3, 16))
        self.assertIsNotNone(bundle.ttp.projection.weight.grad)
        self.assertTrue(all(p.grad is None for p in bundle.ttp.encoder.parameters()))


class InstancePromptTests(TestCase):
    def test_vrm_embedding_replicated_m_times(self):
        vrm = VisualRefineModule(image_size=16, dim=24)

        embedding = vrm_forward(torch.rand(2, 3, 16, 16), vrm)
        rows = replicate_ivp(embedding, tokens=3)

        self.assertEqual(tuple(rows.shape), (2, 3, 24))
        self.assertTrue(torch.equal(rows[:, 0], rows[:, 2]))

    def test_vrm_size_mismatch(self):
        vrm = VisualRefineModule(image_size=16, dim=24)

        with self.assertRaisesRegex(ConfigurationException, "expected 16x16, got 32x32"):
            vrm_forward(torch.rand(1, 3, 32, 32), vrm)

    def test_single_embedding_replication(self):
        self.assertEqual(tuple(replicate_ivp(torch.randn(8), tokens=2).shape), (1, 2, 8))


class PromptBundleTests(TestCase):
    def test_disabled_families_are_not_built(self):
        bundle = PromptBundle(PromptConfig(tvp_tokens=0, ttp_tokens=0, ivp_tokens=0), 2, 16, 16)

        self.assertEqual(sum(p.numel() for p in bundle.parameters()), 0)
        self.assertEqual(tuple(bundle.layer_prompts(1).shape), (0, 16))
        self.assertEqual(tuple(bundle.instance_prompts(torch.rand(3, 3, 16, 16)).shape), (3, 0, 16))

    def test_backbone_consumes_bundle(self):
        config = ModelConfig(image_size=16, patch_size=4, layers=2, dim=16, heads=2)
        backbone = PromptedViT(config)
        bundle = PromptBundle(PromptConfig(tvp_tokens=2, ttp_tokens=1, ivp_tokens=2), 2, 16, 16, encoder_dim=32)

        embedding = backbone(torch.rand(3, 3, 16, 16), bundle)

        self.assertEqual(tuple(embedding.shape), (3, 16))


def hue_shifted(image: torch.Tensor, shift: float) -> torch.Tensor:
    """(3, H, W) RGB in [0, 1] with every pixel's hue rotated by `shift` of a turn."""
    hsv = rgb2hsv(image.permute(1, 2, 0).numpy())
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return torch.from_numpy(hsv2rgb(hsv)).permute(2, 0, 1).to(image.dtype)


class HueSensitivityTests(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        image = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(1))
        self.images = torch.stack([image, hue_shifted(image, 0.3)])

    def test_vrm_embedding_changes_with_hue(self):
        vrm = VisualRefineModule(image_size=16, dim=24)

        with torch.no_grad():
            embeddings = vrm_forward(self.images, vrm)

        self.assertGreater(float(torch.linalg.vector_norm(embeddings[0] - embeddings[1])), 0.0)

    def test_instance_prompted_embedding_changes_with_hue(self):
        backbone = PromptedViT(ModelConfig(image_size=16, patch_size=4, layers=2, dim=16, heads=2))
        bundle = PromptBundle(PromptConfig(tvp_tokens=0, ttp_tokens=0, ivp_tokens=2), 2, 16, 16)

        with torch.no_grad():
            embeddings = backbone(self.images, bundle)

        self.assertGreater(float(torch.linalg.vector_norm(embeddings[0] - embeddings[1])), 0.0)
