from unittest import TestCase

import torch

from prompt_vit_commons.exceptions import InputException, ShapeException

from .models import PatchHead, WSIHead, patch_logits, wsi_aggregate


class PatchHeadTests(TestCase):
    def test_logits_shape(self):
        head = PatchHead(dim=16, num_classes=4)

        self.assertEqual(tuple(patch_logits(torch.randn(5, 16), head).shape), (5, 4))

    def test_width_mismatch(self):
        with self.assertRaises(ShapeException):
            patch_logits(torch.randn(5, 12), PatchHead(dim=16, num_classes=4))


class WSIHeadTests(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.head = WSIHead(dim=16, num_classes=3).double()

    def test_permutation_invariance_is_exact(self):
        generator = torch.Generator().manual_seed(0)
        for _ in range(100):
            size = int(torch.randint(1, 20, (1,), generator=generator))
            bag = torch.randn(size, 16, generator=generator, dtype=torch.float64)
            order = torch.randperm(size, generator=generator)
            with torch.no_grad():
                logits = wsi_aggregate(bag, self.head)
                shuffled = wsi_aggregate(bag[order], self.head)
            self.assertTrue(torch.equal(logits, shuffled))

    def test_attention_weights_sum_to_one_in_input_order(self):
        bag = torch.randn(6, 16, dtype=torch.float64)

        with torch.no_grad():
            _, weights = self.head.pool(bag)
            scores = self.head.scores(bag)

        self.assertAlmostEqual(float(weights.sum()), 1.0, places=12)
        torch.testing.assert_close(weights, scores.softmax(dim=0))

    def test_list_of_embeddings(self):
        rows = [torch.randn(16, dtype=torch.float64) for _ in range(3)]

        self.assertEqual(tuple(wsi_aggregate(rows, self.head).shape), (3,))

    def test_empty_bag(self):
        with self.assertRaises(InputException):
            wsi_aggregate([], self.head)
        with self.assertRaises(InputException):
            self.head.pool(torch.zeros(0, 16, dtype=torch.float64))
