import math
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
import pandas as pd
import pytest

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_commons.exceptions import ConfigurationException, ErrorCode, InputException
from prompt_vit_prompts.configs import PromptConfig
from prompt_vit_synthetic.configs import SynthSpec
from prompt_vit_synthetic.generators import generate_patch_dataset
from prompt_vit_synthetic.sources import DatasetSource
from prompt_vit_training.models import build_model
from prompt_vit_training.modes import DEFAULT_ABLATION_GRID, TuningMode
from prompt_vit_training.splits import split_dataset
from prompt_vit_training.trainer import TrainConfig, fit

from .ablation import AblationTable, ablation_keys, aggregate, default_grid, run_ablation
from .cells import BenchSetup, CellKey, CellResult, run_cell
from .metrics import f1, metric_report, per_class_f1, per_class_roc_auc, roc_auc
from .sweep import prompt_sweep
from .tasks import run_grid_cell

TOY = ModelConfig(image_size=16, patch_size=4, layers=2, dim=16, heads=2, num_classes=2)


def toy_setup(**overrides) -> BenchSetup:
    values = {
        "model_config": TOY,
        "prompt_config": PromptConfig(tvp_tokens=2, ttp_tokens=1, ivp_tokens=1),
        "train_config": TrainConfig(learning_rate=1e-3, batch_size=8, epochs=1),
        "encoder_dim": 32,
    }
    values.update(overrides)
    return BenchSetup(**values)


def toy_spec(samples_per_class: int = 15, seed: int = 0) -> SynthSpec:
    return SynthSpec(num_classes=2, samples_per_class=samples_per_class, image_size=16, seed=seed)


def pair_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney statistic by direct pair enumeration, ties count one half."""
    wins = 0.0
    pairs = 0
    for s_pos in scores[positives]:
        for s_neg in scores[~positives]:
            wins += 1.0 if s_pos > s_neg else 0.5 if s_pos == s_neg else 0.0
            pairs += 1
    return wins / pairs


def confusion_f1(predictions: np.ndarray, labels: np.ndarray, c: int) -> float:
    tp = int(np.sum((predictions == c) & (labels == c)))
    fp = int(np.sum((predictions == c) & (labels != c)))
    fn = int(np.sum((predictions != c) & (labels == c)))
    return 2 * tp / (2 * tp + fp + fn)


class MetricTests(TestCase):
    def test_binary_auc_known_value(self):
        self.assertAlmostEqual(roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]), 0.75, places=12)

    def test_macro_f1_known_value(self):
        per_class = per_class_f1([0, 1, 1, 1], [0, 0, 1, 1])

        self.assertEqual(set(per_class), {0, 1})
        self.assertAlmostEqual(per_class[0], 2 / 3, places=12)
        self.assertAlmostEqual(per_class[1], 4 / 5, places=12)
        self.assertAlmostEqual(f1([0, 1, 1, 1], [0, 0, 1, 1]), 11 / 15, places=12)

    def test_agrees_with_brute_force_oracles(self):
        rng = np.random.default_rng(0)
        grid = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        for _ in range(400):
            n = int(rng.integers(2, 9))
            k = int(rng.integers(2, 4))
            labels = rng.integers(0, k, size=n)
            scores = rng.choice(grid, size=(n, k))
            predictions = rng.integers(0, k, size=n)

            expected_auc = {
                c: pair_auc(scores[:, c], labels == c)
                for c in range(k)
                if (labels == c).any() and not (labels == c).all()
            }
            per_class, _ = per_class_roc_auc(scores, labels)
            self.assertEqual(set(per_class), set(expected_auc))
            for c, value in expected_auc.items():
                self.assertAlmostEqual(per_class[c], value, delta=1e-12)
            if expected_auc:
                self.assertAlmostEqual(roc_auc(scores, labels), np.mean(list(expected_auc.values())), delta=1e-12)
            else:
                self.assertTrue(math.isnan(roc_auc(scores, labels)))

            present = sorted(set(labels.tolist()))
            expected_f1 = np.mean([confusion_f1(predictions, labels, c) for c in present])
            self.assertAlmostEqual(f1(predictions, labels), expected_f1, delta=1e-12)

    def test_auc_invariant_to_monotone_rescaling(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(np.linspace(0.05, 0.95, 12))
        labels = np.array([0, 1] * 6)

        self.assertEqual(roc_auc(scores, labels), roc_auc(3.0 * scores + 1.0, labels))
        self.assertEqual(roc_auc(scores, labels), roc_auc(np.exp(scores), labels))

    def test_absent_class_excluded_with_warning(self):
        scores = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1]])

        with self.assertLogs("prompt_vit_bench.metrics", level="WARNING"):
            report = metric_report(scores, [0, 1, 0, 1])

        self.assertEqual(set(report.per_class_auc), {0, 1})
        self.assertEqual(report.auc, 1.0)
        self.assertIn("class 2 absent from labels; excluded from macro AUC", report.warnings)
        self.assertEqual(report.f1, 1.0)
        self.assertEqual(report.n_samples, 4)

    def test_input_errors(self):
        with self.assertRaises(InputException) as ctx:
            roc_auc([], [])
        self.assertEqual(ctx.exception.error_code, ErrorCode.EMPTY_INPUT)
        with self.assertRaises(InputException) as ctx:
            f1([0, 1], [0, 1, 1])
        self.assertEqual(ctx.exception.error_code, ErrorCode.LENGTH_MISMATCH)
        with self.assertRaises(InputException) as ctx:
            roc_auc(np.full((2, 2), 0.5), [0, 2])
        self.assertEqual(ctx.exception.error_code, ErrorCode.LABEL_OUT_OF_RANGE)


class AggregateTests(TestCase):
    def test_sample_std(self):
        mean, std, n = aggregate([0.8, 0.9])

        self.assertAlmostEqual(mean, 0.85)
        self.assertAlmostEqual(std, math.sqrt(0.005))
        self.assertEqual(n, 2)

    def test_single_and_empty(self):
        self.assertEqual(aggregate([0.7]), (0.7, 0.0, 1))
        mean, std, n = aggregate([math.nan, None])
        self.assertTrue(math.isnan(mean) and math.isnan(std))
        self.assertEqual(n, 0)


class AblationTableTests(TestCase):
    def setUp(self):
        grid = list(DEFAULT_ABLATION_GRID)
        cells = [
            CellResult(CellKey("a", mode.label, seed), auc=0.5 + 0.1 * i + 0.01 * seed, f1=0.4, n_eval=10)
            for i, mode in enumerate(grid)
            for seed in (0, 1)
        ]
        cells.append(CellResult(CellKey("a", "LP", 2), error="50001: boom"))
        self.table = AblationTable(grid=grid, datasets=["a"], cells=cells)

    def test_rows_and_flags(self):
        frame = self.table.to_frame()

        self.assertEqual(list(frame.columns), ["mode", "ttp", "tvp", "ivp", "dataset", "metric", "mean", "std", "n"])
        self.assertEqual(len(frame), 10)
        lp = frame[(frame["mode"] == "LP") & (frame["metric"] == "auc")].iloc[0]
        self.assertEqual((lp["ttp"], lp["tvp"], lp["ivp"]), ("off", "off", "off"))
        self.assertAlmostEqual(lp["mean"], 0.505)
        self.assertEqual(lp["n"], 2)
        everything = frame[(frame["mode"] == "pathotune") & (frame["ttp"] == "on") & (frame["tvp"] == "on")]
        self.assertEqual(set(everything["ivp"]), {"on"})

    def test_failures_kept_out_of_means(self):
        self.assertFalse(self.table.complete)
        self.assertEqual(len(self.table.failures), 1)
        self.assertAlmostEqual(self.table.mean(TuningMode.linear_probe(), "a"), 0.505)

    def test_render_in_percent(self):
        text = self.table.render()

        self.assertIn("50.5 ± 0.7", text)
        self.assertIn("all", text)

    def test_write(self):
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, json_path = self.table.write(Path(tmp))
            frame = pd.read_csv(csv_path)

            self.assertEqual(len(frame), 10)
            self.assertTrue(json_path.is_file())

    def test_default_grid(self):
        self.assertEqual([m.label for m in default_grid()], ["LP", "TTP", "TVP", "IVP", "all"])
        self.assertEqual(default_grid(include_full_finetune=True)[-1].label, "FT")

    def test_kfold_keys(self):
        keys = ablation_keys(default_grid(), ["a", "b"], [0, 1], toy_setup(protocol="kfold", folds=3))

        self.assertEqual(len(keys), 5 * 2 * 2 * 3)
        self.assertEqual({key.fold for key in keys}, {0, 1, 2})


class CellTests(TestCase):
    def test_unknown_protocol(self):
        with self.assertRaises(ConfigurationException):
            toy_setup(protocol="bootstrap")

    def test_setup_round_trip(self):
        setup = toy_setup(protocol="kfold", folds=3)

        self.assertEqual(BenchSetup.from_dict(setup.to_dict()), setup)

    def test_failed_cell_is_recorded(self):
        items = generate_patch_dataset(toy_spec(samples_per_class=2))

        result = run_cell(toy_setup(), items, CellKey("tiny", "all", 0))

        self.assertFalse(result.completed)
        self.assertIn(ErrorCode.TOO_FEW_ITEMS, result.error)

    def test_grid_cell_task_runs_from_payload(self):
        source = DatasetSource(name="toy", spec=toy_spec())
        payload = {
            "setup": toy_setup().to_dict(),
            "source": source.to_dict(),
            "key": CellKey("toy", "TVP", 0).to_dict(),
        }

        record = run_grid_cell.apply(args=(payload,)).get()

        result = CellResult.from_dict(record)
        self.assertTrue(result.completed, msg=result.error)
        self.assertEqual(result.n_eval, 3)


class AblationRunTests(TestCase):
    def test_ablation_on_a_tiny_set(self):
        items = generate_patch_dataset(toy_spec())

        table = run_ablation(default_grid(), {"toy": items}, [0], toy_setup(), executor="local")

        self.assertTrue(table.complete, msg=[cell.error for cell in table.failures])
        self.assertEqual(len(table.cells), 5)
        self.assertEqual(len(table.rows()), 10)
        self.assertTrue(all(cell.n_eval == 3 for cell in table.cells))

    def test_grid_must_not_repeat(self):
        with self.assertRaises(InputException):
            run_ablation([TuningMode.linear_probe()] * 2, {"toy": []}, [0], toy_setup(), executor="local")

    def test_prompt_sweep_records(self):
        items = generate_patch_dataset(toy_spec())

        table = prompt_sweep(items, [1, 2], [0, 1], [0, 1], toy_setup(), executor="local")

        records = table.records()
        self.assertTrue(table.complete)
        self.assertEqual(len(records), 8)
        combinations = {(n, t, m) for n in (1, 2) for t in (0, 1) for m in (0, 1)}
        self.assertEqual({(r["N"], r["T"], r["M"]) for r in records}, combinations)
        self.assertEqual(table.cells[0].key.mode, "TVP")

    def test_sweep_rejects_negative_counts(self):
        with self.assertRaises(InputException):
            prompt_sweep([], [-1], [0], [0], toy_setup(), executor="local")


@pytest.mark.slow
class CapacityOrderingTests(TestCase):
    def test_train_loss_ordering_full_prompt_linear(self):
        items = generate_patch_dataset(
            SynthSpec(num_classes=2, samples_per_class=20, image_size=16, instance_gap_strength=0.3, seed=0)
        )
        prompts = PromptConfig(tvp_tokens=4, ttp_tokens=2, ivp_tokens=2)
        modes = [TuningMode.full_finetune(), TuningMode.pathotune(), TuningMode.linear_probe()]
        losses = {}
        for mode in modes:
            finals = []
            for seed in (0, 1, 2):
                model = build_model(TOY, prompts, mode, seed=seed, encoder_dim=32)
                cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=30, seed=seed, mode=mode)
                _, history = fit(items, model, cfg)
                finals.append(history.records[-1].train_loss)
            losses[mode.label] = float(np.mean(finals))

        self.assertLessEqual(losses["FT"], losses["all"])
        self.assertLessEqual(losses["all"], losses["LP"])


@pytest.mark.slow
class AblationOrderingTests(TestCase):
    def test_prompts_beat_head_only_tuning_on_the_desk_model(self):
        spec = SynthSpec(num_classes=4, samples_per_class=143, instance_gap_strength=0.3, seed=0)
        items = generate_patch_dataset(spec)
        setup = BenchSetup(ModelConfig(), PromptConfig(), TrainConfig(learning_rate=1e-3, epochs=40))
        self.assertIn(len(split_dataset(items)[0]), (400, 401))

        table = run_ablation(list(DEFAULT_ABLATION_GRID), {"synthetic": items}, [0, 1, 2], setup, executor="local")

        self.assertTrue(table.complete, msg=[cell.error for cell in table.failures])
        auc = {mode.label: table.mean(mode, "synthetic") for mode in DEFAULT_ABLATION_GRID}
        self.assertGreaterEqual(auc["all"], auc["LP"] + 0.05, msg=auc)
        self.assertGreaterEqual(auc["IVP"], auc["TTP"], msg=auc)
