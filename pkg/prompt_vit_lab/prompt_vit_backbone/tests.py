from unittest import TestCase

import numpy as np
import torch

from prompt_vit_commons.exceptions import ConfigurationException, ShapeException

from .configs import ModelConfig
from .models import PromptedViT, images_to_tensor
from .tokens import TokenRole, TokenSequence, assemble_first_input, reprompt


class FixedPrompts:
    """Prompt provider returning fixed blocks."""

    def __init__(self, layers: int, dim: int, n: int = 0, t: int = 0, m: int = 0, seed: int = 0):
        generator = torch.Generator().manual_seed(seed)
        self.tvp = torch.randn(layers, n, dim, generator=generator)
        self.ttp = torch.randn(t, dim, generator=generator)
        self.m = m
        self.dim = dim

    def layer_prompts(self, layer_index):
        return self.tvp[layer_index]

    def textual_prompts(self):
        return self.ttp

    def instance_prompts(self, images):
        return images.mean(dim=(1, 2, 3)).reshape(-1, 1, 1).expand(-1, self.m, self.dim)


class ModelConfigTests(TestCase):
    def test_indivisible_image_size(self):
        with self.assertRaisesRegex(ConfigurationException, "image_size not divisible by patch_size"):
            ModelConfig(image_size=30, patch_size=8)

    def test_presets(self):
        vit_s = ModelConfig.from_preset("vit-s", num_classes=4)

        self.assertEqual((vit_s.layers, vit_s.dim, vit_s.heads, vit_s.num_patches), (12, 384, 6, 196))
        with self.assertRaises(ConfigurationException):
            ModelConfig.from_preset("vit-h", num_classes=4)

    def test_desk_geometry(self):
        config = ModelConfig()

        self.assertEqual(config.num_patches, 16)
        self.assertEqual(config.patch_dim, 192)
        self.assertEqual(config.mlp_dim, 256)


class TokenLayoutTests(TestCase):
    def test_first_and_deeper_layer_lengths_over_random_configs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n, t, m = (int(v) for v in rng.integers(0, 12, size=3))
            k = int(rng.integers(1, 50))
            c = int(rng.integers(1, 9)) * 4
            b = int(rng.integers(1, 4))
            seq = assemble_first_input(
                torch.randn(c), torch.randn(n, c), torch.randn(t, c), torch.randn(b, m, c), torch.randn(b, k, c)
            )
            self.assertEqual(len(seq), 1 + n + t + m + k)
            self.assertEqual(tuple(seq.tokens.shape), (b, 1 + n + t + m + k, c))
            self.assertEqual(
                [seq.count(role) for role in TokenRole], [1, n, t, m, k], msg=f"N={n} T={t} M={m} K={k}"
            )

            deeper = reprompt(seq, torch.randn(n, c))
            self.assertEqual(len(deeper), 1 + n + k)
            self.assertEqual(deeper.count(TokenRole.TTP) + deeper.count(TokenRole.IVP), 0)

    def test_reprompt_keeps_cls_and_patch_rows(self):
        seq = assemble_first_input(
            torch.randn(8), torch.randn(3, 8), torch.randn(2, 8), torch.randn(1, 2, 8), torch.randn(1, 4, 8)
        )
        fresh = torch.randn(3, 8)

        deeper = reprompt(seq, fresh)

        torch.testing.assert_close(deeper.rows(TokenRole.CLS), seq.rows(TokenRole.CLS), rtol=0, atol=0)
        torch.testing.assert_close(deeper.rows(TokenRole.PATCH), seq.rows(TokenRole.PATCH), rtol=0, atol=0)
        torch.testing.assert_close(deeper.rows(TokenRole.TVP)[0], fresh, rtol=0, atol=0)

    def test_width_mismatch(self):
        with self.assertRaises(ShapeException):
            assemble_first_input(
                torch.randn(8), torch.randn(3, 6), torch.randn(0, 8), torch.randn(1, 0, 8), torch.randn(1, 4, 8)
            )

    def test_out_of_order_roles_rejected(self):
        with self.assertRaises(ShapeException):
            TokenSequence(torch.zeros(1, 3, 4), (TokenRole.CLS, TokenRole.PATCH, TokenRole.TVP))


class PromptedViTTests(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.config = ModelConfig(image_size=16, patch_size=4, layers=2, dim=16, heads=2)
        self.model = PromptedViT(self.config).eval()

    def test_promptless_forward_is_bit_identical_to_plain_path(self):
        empty = FixedPrompts(self.config.layers, self.config.dim)
        generator = torch.Generator().manual_seed(1)
        with torch.no_grad():
            for _ in range(20):
                images = torch.rand(3, 3, 16, 16, generator=generator)
                prompted = self.model(images, empty)
                plain = self.model.forward_plain(images)
                self.assertTrue(torch.equal(prompted, plain))

    def test_prompts_change_the_embedding(self):
        prompts = FixedPrompts(self.config.layers, self.config.dim, n=2, t=1, m=1)
        images = torch.rand(2, 3, 16, 16)
        with torch.no_grad():
            prompted = self.model(images, prompts)
            plain = self.model.forward_plain(images)

        self.assertEqual(tuple(prompted.shape), (2, 16))
        self.assertFalse(torch.allclose(prompted, plain))

    def test_image_size_mismatch_names_sizes(self):
        with self.assertRaisesRegex(ConfigurationException, "expected 16x16x3, got 20x20x3"):
            self.model.forward_plain(torch.rand(1, 3, 20, 20))

    def test_images_to_tensor_accepts_hwc_arrays(self):
        array = np.random.default_rng(0).random((16, 16, 3))

        tensor = images_to_tensor(array)

        self.assertEqual(tuple(tensor.shape), (1, 3, 16, 16))
        self.assertAlmostEqual(float(tensor[0, 2, 5, 7]), float(array[5, 7, 2]), places=6)
        with self.assertRaises(ShapeException):
            images_to_tensor(np.zeros((16, 16)))
