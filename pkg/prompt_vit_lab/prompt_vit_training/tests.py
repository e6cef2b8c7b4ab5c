import math
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
import pytest
import torch

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_commons.exceptions import (
    ConfigurationException,
    ContractViolationException,
    ErrorCode,
    InputException,
    NotFoundException,
)
from prompt_vit_prompts.configs import PromptConfig
from prompt_vit_synthetic.configs import SynthSpec
from prompt_vit_synthetic.generators import generate_patch_dataset, generate_wsi_bags

from .checkpoints import checkpoint_record, load_checkpoint, restore_model, save_checkpoint, serialize_checkpoint
from .counting import analytic_parameter_count
from .gradcheck import check_groups
from .models import (
    ParamGroup,
    ParamPartition,
    build_model,
    count_trainable_fraction,
    partition_params,
    trainable_groups,
)
from .modes import DEFAULT_ABLATION_GRID, TuningMode
from .splits import kfold, largest_remainder, split_dataset
from .trainer import TrainConfig, evaluate, fit, init_train_state, loss, optimizer_step

TOY = ModelConfig(image_size=16, patch_size=4, layers=2, dim=16, heads=2, num_classes=2)
TOY_PROMPTS = PromptConfig(tvp_tokens=2, ttp_tokens=2, ivp_tokens=2)
MODES = [
    TuningMode.linear_probe(),
    TuningMode.full_finetune(),
    TuningMode.pathotune(),
    TuningMode.pathotune(tvp_on=True, ttp_on=False, ivp_on=False),
    TuningMode.pathotune(tvp_on=False, ttp_on=True, ivp_on=True),
]


def toy_model(mode: TuningMode, level: str = "patch", seed: int = 0):
    return build_model(TOY, TOY_PROMPTS, mode, level=level, seed=seed, encoder_dim=32)


def toy_patches(samples_per_class: int = 6, seed: int = 0):
    spec = SynthSpec(num_classes=2, samples_per_class=samples_per_class, image_size=16, seed=seed)
    return generate_patch_dataset(spec)


class TuningModeTests(TestCase):
    def test_labels(self):
        self.assertEqual(
            [mode.label for mode in DEFAULT_ABLATION_GRID], ["LP", "TTP", "TVP", "IVP", "all"]
        )
        self.assertEqual(TuningMode.pathotune(True, True, False).label, "TTP+TVP")
        self.assertEqual(TuningMode.pathotune(False, False, False).label, "pathotune(none)")

    def test_label_round_trip(self):
        for mode in [*MODES, TuningMode.pathotune(False, False, False)]:
            self.assertEqual(TuningMode.from_label(mode.label), mode)

    def test_non_prompt_modes_drop_flags(self):
        mode = TuningMode.parse("ft", tvp=True, ttp=True, ivp=True)

        self.assertFalse(mode.uses_prompts)
        self.assertEqual(mode.effective_prompts(TOY_PROMPTS).ttp_tokens, 0)

    def test_unknown_mode(self):
        with self.assertRaises(ConfigurationException):
            TuningMode.parse("prompt-everything")


class PartitionTests(TestCase):
    def test_partition_follows_mode(self):
        for mode in MODES:
            model = toy_model(mode)
            partition = partition_params(model, mode)
            names = [name for name, _ in model.named_parameters()]

            self.assertEqual(sorted(names), sorted([*partition.frozen, *partition.trainable]), msg=mode.label)
            for name, param in model.named_parameters():
                self.assertEqual(param.requires_grad, name in partition.trainable, msg=name)
            self.assertEqual(partition.names(ParamGroup.TEXT_ENCODER, trainable=True), [])
            self.assertTrue(partition.names(ParamGroup.HEAD, trainable=True))
            backbone_trains = bool(partition.names(ParamGroup.BACKBONE, trainable=True))
            self.assertEqual(backbone_trains, ParamGroup.BACKBONE in trainable_groups(mode))

    def test_text_encoder_frozen_even_when_built(self):
        mode = TuningMode.pathotune()
        partition = partition_params(toy_model(mode), mode)

        self.assertEqual(partition.names(ParamGroup.TEXT_ENCODER, trainable=False), ["prompts.ttp.encoder.weight"])

    def test_overlapping_partition_rejected(self):
        param = torch.nn.Parameter(torch.zeros(2))
        with self.assertRaises(ConfigurationException):
            ParamPartition(frozen={"head.w": param}, trainable={"head.w": param})

    def test_linear_probe_fraction(self):
        partition = ParamPartition(
            frozen={"backbone.w": torch.nn.Parameter(torch.zeros(1000))},
            trainable={"head.w": torch.nn.Parameter(torch.zeros(10))},
        )

        self.assertAlmostEqual(count_trainable_fraction(partition), 10 / 1010)


class LossTests(TestCase):
    def test_uniform_logits(self):
        for n in (2, 4, 7):
            value = loss(torch.zeros(3, n, dtype=torch.float64), [0, 1, n - 1])
            self.assertAlmostEqual(float(value), math.log(n), places=12)

    def test_known_value(self):
        value = loss(torch.tensor([2.0, 0.0], dtype=torch.float64), [0])

        self.assertAlmostEqual(float(value), math.log1p(math.exp(-2.0)), places=12)
        self.assertAlmostEqual(float(value), 0.1269, places=4)

    def test_label_out_of_range(self):
        with self.assertRaises(InputException) as ctx:
            loss(torch.zeros(1, 3), [3])
        self.assertEqual(ctx.exception.error_code, ErrorCode.LABEL_OUT_OF_RANGE)

    def test_length_mismatch(self):
        with self.assertRaises(InputException) as ctx:
            loss(torch.zeros(2, 3), [0])
        self.assertEqual(ctx.exception.error_code, ErrorCode.LENGTH_MISMATCH)


class OptimizerStepTests(TestCase):
    def setUp(self):
        self.mode = TuningMode.linear_probe()
        self.model = toy_model(self.mode).double()
        self.cfg = TrainConfig(learning_rate=1e-2, mode=self.mode)
        self.state = init_train_state(self.model, self.cfg)

    def test_zero_gradient_step_leaves_parameters(self):
        before = {name: param.detach().clone() for name, param in self.model.named_parameters()}

        optimizer_step(self.state, {name: torch.zeros_like(p) for name, p in self.state.partition.trainable.items()})

        self.assertEqual(self.state.step, 1)
        for name, param in self.model.named_parameters():
            self.assertTrue(torch.equal(param, before[name]), msg=name)

    def test_frozen_gradient_is_a_contract_violation(self):
        grads = {name: torch.zeros_like(p) for name, p in self.state.partition.trainable.items()}
        frozen_name = next(iter(self.state.partition.frozen))
        grads[frozen_name] = torch.ones_like(self.state.partition.frozen[frozen_name])

        with self.assertRaises(ContractViolationException) as ctx:
            optimizer_step(self.state, grads)
        self.assertEqual(ctx.exception.error_code, ErrorCode.FROZEN_PARAMETER_GRADIENT)

    def test_missing_gradient_is_a_contract_violation(self):
        with self.assertRaises(ContractViolationException):
            optimizer_step(self.state, {})

    def test_matches_rectified_adam_reference(self):
        beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 1e-2
        rho_inf = 2.0 / (1.0 - beta2) - 1.0
        trainable = self.state.partition.trainable
        expected = {name: param.detach().numpy().copy() for name, param in trainable.items()}
        m = {name: np.zeros_like(value) for name, value in expected.items()}
        v = {name: np.zeros_like(value) for name, value in expected.items()}
        rng = np.random.default_rng(0)

        # steps 1-5 take the unrectified branch, 6-8 the rectified one
        for t in range(1, 9):
            grads = {name: rng.standard_normal(value.shape) for name, value in expected.items()}
            optimizer_step(self.state, {name: torch.from_numpy(g) for name, g in grads.items()})
            rho_t = rho_inf - 2.0 * t * beta2**t / (1.0 - beta2**t)
            for name, g in grads.items():
                m[name] = beta1 * m[name] + (1.0 - beta1) * g
                v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
                m_hat = m[name] / (1.0 - beta1**t)
                if rho_t > 5.0:
                    rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
                    adaptive = math.sqrt(1.0 - beta2**t) / (np.sqrt(v[name]) + eps)
                    expected[name] = expected[name] - lr * m_hat * rect * adaptive
                else:
                    expected[name] = expected[name] - lr * m_hat
                np.testing.assert_allclose(trainable[name].detach().numpy(), expected[name], rtol=0, atol=1e-12)


class SplitTests(TestCase):
    def test_sizes_within_one_of_quota_and_disjoint(self):
        for n in range(10, 201):
            train, val, test = split_dataset(list(range(n)), seed=n)
            for part, ratio in zip((train, val, test), (7, 2, 1), strict=True):
                self.assertLess(abs(len(part) - n * ratio / 10), 1, msg=f"n={n}")
            self.assertEqual(sorted(train + val + test), list(range(n)))

    def test_largest_remainder(self):
        self.assertEqual(largest_remainder(15, (7, 2, 1)), [11, 3, 1])
        self.assertEqual(sum(largest_remainder(199, (7, 2, 1))), 199)

    def test_split_is_seeded(self):
        self.assertEqual(split_dataset(list(range(30)), seed=4), split_dataset(list(range(30)), seed=4))
        self.assertNotEqual(split_dataset(list(range(30)), seed=4), split_dataset(list(range(30)), seed=5))

    def test_too_few_items(self):
        with self.assertRaises(InputException) as ctx:
            split_dataset(list(range(9)))
        self.assertEqual(ctx.exception.error_code, ErrorCode.TOO_FEW_ITEMS)

    def test_kfold_validation_parts_partition_items(self):
        folds = kfold(list(range(13)), k=4, seed=1)

        self.assertEqual(len(folds), 4)
        self.assertEqual(sorted(i for _, val in folds for i in val), list(range(13)))
        for train, val in folds:
            self.assertEqual(sorted(train + val), list(range(13)))
        with self.assertRaises(InputException):
            kfold(list(range(3)), k=4)

    def test_kfold_sizes_balanced_for_every_size(self):
        for n in range(10, 201):
            folds = kfold(list(range(n)), k=4, seed=n)
            sizes = [len(val) for _, val in folds]
            self.assertEqual(len(folds), 4, msg=f"n={n}")
            self.assertLessEqual(max(sizes) - min(sizes), 1, msg=f"n={n}")
            self.assertEqual(sorted(i for _, val in folds for i in val), list(range(n)), msg=f"n={n}")
            for train, val in folds:
                self.assertTrue(set(train).isdisjoint(val), msg=f"n={n}")
                self.assertEqual(len(train) + len(val), n, msg=f"n={n}")


class FitTests(TestCase):
    def test_frozen_parameters_bit_identical_after_training(self):
        mode = TuningMode.pathotune()
        model = toy_model(mode)
        before = {name: p.detach().clone() for name, p in model.named_parameters()}
        frozen = [name for name in before if name.startswith(("backbone.", "prompts.ttp.encoder."))]
        tuned = [
            name
            for name in before
            if name.startswith(("prompts.tvp.", "prompts.ttp.projection.", "prompts.vrm.", "head."))
        ]

        cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=10, mode=mode)

        state, history = fit(toy_patches(samples_per_class=10), model, cfg)

        self.assertEqual(len(history), 10)
        self.assertEqual(state.step, 50)
        self.assertTrue(any(name.startswith("prompts.ttp.encoder.") for name in frozen))
        params = dict(model.named_parameters())
        for name in frozen:
            self.assertTrue(torch.equal(params[name], before[name]), msg=name)
        for prefix in ("prompts.tvp.", "prompts.ttp.projection.", "prompts.vrm.", "head."):
            self.assertTrue(
                any(not torch.equal(params[name], before[name]) for name in tuned if name.startswith(prefix)),
                msg=prefix,
            )

    def test_validation_tracking_and_patience(self):
        mode = TuningMode.pathotune(tvp_on=True, ttp_on=False, ivp_on=False)
        items = toy_patches(samples_per_class=8)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=6, patience=1, mode=mode)

        _, history = fit(items[:12], toy_model(mode), cfg, validation=items[12:])

        self.assertGreaterEqual(len(history), 2)
        self.assertLessEqual(len(history), 6)
        self.assertIsNotNone(history.best_epoch)
        self.assertIsNotNone(history.records[0].val_auc)

    def test_slide_level_training(self):
        mode = TuningMode.pathotune()
        spec = SynthSpec(num_classes=2, samples_per_class=1, image_size=16, seed=0)
        bags = generate_wsi_bags(spec, (2, 4), num_bags=6)
        model = toy_model(mode, level="wsi")

        _, history = fit(bags, model, TrainConfig(learning_rate=1e-3, batch_size=2, epochs=1, mode=mode))
        result = evaluate(model, bags)

        self.assertEqual(len(history), 1)
        self.assertEqual(result.probabilities.shape, (6, 2))
        np.testing.assert_allclose(result.probabilities.sum(axis=1), 1.0, atol=1e-6)

    def test_empty_dataset(self):
        with self.assertRaises(InputException) as ctx:
            fit([], toy_model(TuningMode.linear_probe()), TrainConfig())
        self.assertEqual(ctx.exception.error_code, ErrorCode.EMPTY_INPUT)


class GradientCheckTests(TestCase):
    def test_every_trainable_group_matches_central_differences(self):
        mode = TuningMode.pathotune()
        model = toy_model(mode).double().eval()
        partition = partition_params(model, mode)
        images = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        labels = [0, 1, 0, 1]

        checks = check_groups(lambda: loss(model(images), labels), partition)

        self.assertEqual(set(checks), {ParamGroup.TVP, ParamGroup.TEXT_PROJECTION, ParamGroup.VRM, ParamGroup.HEAD})
        for group, check in checks.items():
            self.assertLess(check.relative_error, 1e-4, msg=group)


class ParameterCountTests(TestCase):
    def test_analytic_count_matches_built_model(self):
        for level in ("patch", "wsi"):
            for mode in MODES:
                partition = partition_params(toy_model(mode, level=level), mode)
                count = analytic_parameter_count(TOY, TOY_PROMPTS, mode, level=level, encoder_dim=32)

                self.assertEqual(count.total, partition.numel(exclude=(ParamGroup.TEXT_ENCODER,)), msg=mode.label)
                self.assertEqual(
                    count.trainable, partition.numel(trainable=True, exclude=(ParamGroup.TEXT_ENCODER,)), msg=mode.label
                )
                self.assertEqual(count.text_encoder, partition.numel() - count.total)
                self.assertAlmostEqual(count.fraction, count_trainable_fraction(partition))

    def test_vit_small_fraction(self):
        config = ModelConfig.from_preset("vit-s", num_classes=4)

        count = analytic_parameter_count(config, PromptConfig(), TuningMode.pathotune())

        self.assertLessEqual(count.fraction, 0.10)
        self.assertGreater(count.trainable, 0)


class CheckpointTests(TestCase):
    def test_save_load_save_is_byte_stable(self):
        mode = TuningMode.pathotune()
        model = toy_model(mode)
        record = checkpoint_record(
            model, TOY, TOY_PROMPTS, TrainConfig(mode=mode).to_dict(), mode, step=3, encoder_dim=32
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / "checkpoint.pt", record)
            loaded = load_checkpoint(path)

            self.assertEqual(serialize_checkpoint(loaded), path.read_bytes())

        restored = restore_model(loaded)
        images = torch.rand(2, 3, 16, 16)
        with torch.no_grad():
            self.assertTrue(torch.equal(restored.eval()(images), model.eval()(images)))
        self.assertEqual(TrainConfig.from_dict(loaded["train_config"]).mode, mode)

    def test_missing_checkpoint(self):
        with self.assertRaises(NotFoundException) as ctx:
            load_checkpoint(Path("does/not/exist.pt"))
        self.assertEqual(ctx.exception.error_code, ErrorCode.CHECKPOINT_NOT_FOUND)


@pytest.mark.slow
class CapacityTests(TestCase):
    def test_prompt_tuning_fits_a_small_separable_set(self):
        mode = TuningMode.pathotune()
        items = generate_patch_dataset(
            SynthSpec(num_classes=2, samples_per_class=20, image_size=16, instance_gap_strength=0.0, seed=0)
        )
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=200, mode=mode)

        _, history = fit(items, toy_model(mode), cfg)

        self.assertGreaterEqual(max(record.train_accuracy for record in history.records), 0.95)
