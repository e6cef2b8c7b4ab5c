import json
import tempfile
from pathlib import Path
from unittest import TestCase

import pandas as pd
import pytest
import yaml

from manage import main
from prompt_vit_commons.exceptions import (
    ConfigTypeException,
    ConfigurationException,
    ErrorCode,
    NotFoundException,
    UnknownConfigKeyException,
)
from prompt_vit_commons.seeding import derive_seed
from prompt_vit_lab.settings import OUTPUT_ROOT

from .commands import REFERENCE_TRAINABLE_FRACTION, resolve_output_dir, run_experiment
from .configs import (
    ExperimentConfig,
    ablation_seeds,
    config_from_dict,
    config_to_dict,
    parse_config,
    serialize_config,
)

TINY = {
    "model": {"image_size": 16, "patch_size": 4, "layers": 2, "dim": 16, "heads": 2},
    "prompts": {"tvp_tokens": 2, "ttp_tokens": 1, "ivp_tokens": 1},
    "ttp": {"encoder_dim": 32},
    "train": {"epochs": 1, "batch_size": 8, "learning_rate": 0.001},
    "data": {"num_classes": 2, "samples_per_class": 15},
}


def tiny_config(out: Path, **dotted) -> ExperimentConfig:
    return config_from_dict({**TINY, "output_dir": str(out), **dotted})


class ConfigParsingTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, record, name: str = "config.yaml") -> Path:
        path = self.root / name
        path.write_text(yaml.safe_dump(record), encoding="utf-8")
        return path

    def test_minimal_config_gets_defaults(self):
        cfg = parse_config(self.write({"seed": 3}))

        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg.train.learning_rate, 0.0002)
        self.assertEqual(cfg.train.batch_size, 32)
        self.assertEqual(cfg.train.optimizer, "radam")
        self.assertEqual((cfg.prompts.tvp_tokens, cfg.prompts.ttp_tokens, cfg.prompts.ivp_tokens), (10, 2, 2))
        self.assertEqual(cfg.ablation.seeds, [0])

    def test_empty_file_is_all_defaults(self):
        path = self.root / "empty.yaml"
        path.write_text("", encoding="utf-8")

        self.assertEqual(parse_config(path), ExperimentConfig())

    def test_dotted_and_nested_keys_merge(self):
        cfg = parse_config(self.write({"train.batch_size": 8, "train": {"epochs": 2}}))

        self.assertEqual((cfg.train.batch_size, cfg.train.epochs), (8, 2))

    def test_unknown_key_names_the_dotted_path(self):
        with self.assertRaises(UnknownConfigKeyException) as ctx:
            parse_config(self.write({"train.batchsize": 8}))

        self.assertIn("train.batchsize", ctx.exception.detail)
        self.assertEqual(ctx.exception.error_code, ErrorCode.UNKNOWN_CONFIG_KEY)

    def test_wrong_type_names_the_expected_type(self):
        with self.assertRaises(ConfigTypeException) as ctx:
            parse_config(self.write({"train": {"batch_size": "many"}}))

        self.assertIn("train.batch_size", ctx.exception.detail)
        self.assertIn("int", ctx.exception.detail)

    def test_invalid_values_fail_validation(self):
        with self.assertRaises(ConfigurationException):
            parse_config(self.write({"model.image_size": 30}))
        with self.assertRaises(ConfigurationException):
            parse_config(self.write({"train.mode": "everything"}))
        with self.assertRaises(ConfigurationException):
            parse_config(self.write({"ablation.protocol": "bootstrap"}))

    def test_missing_paths(self):
        with self.assertRaises(NotFoundException) as ctx:
            parse_config(self.write({"data.path": str(self.root / "absent")}))
        self.assertEqual(ctx.exception.error_code, ErrorCode.DATASET_NOT_FOUND)

        with self.assertRaises(NotFoundException) as ctx:
            parse_config(self.write({"model.backbone_checkpoint": str(self.root / "absent.pt")}))
        self.assertEqual(ctx.exception.error_code, ErrorCode.CHECKPOINT_NOT_FOUND)

    def test_overrides_win(self):
        path = self.write({"seed": 1, "train": {"mode": "pathotune"}})

        cfg = parse_config(path, overrides={"seed": 9, "train.mode": "LP"})

        self.assertEqual((cfg.seed, cfg.train.mode), (9, "LP"))

    def test_serialized_config_parses_back_identically(self):
        cfg = tiny_config(self.root / "out", seed=4, **{"train.tvp": False})
        path = self.root / "resolved.yaml"
        path.write_text(serialize_config(cfg), encoding="utf-8")

        self.assertEqual(parse_config(path), cfg)
        self.assertEqual(config_from_dict(config_to_dict(cfg)), cfg)

    def test_run_record_is_a_valid_config(self):
        cfg = tiny_config(self.root / "run", seed=5)
        status, _ = run_experiment(cfg, "count-params")

        self.assertEqual(status, 0)
        self.assertEqual(parse_config(self.root / "run" / "run.json"), cfg)

    def test_ablation_seeds_follow_the_root_seed(self):
        first = ablation_seeds(config_from_dict({"seed": 0, "ablation.seeds": [0, 1, 2]}))
        second = ablation_seeds(config_from_dict({"seed": 1, "ablation.seeds": [0, 1, 2]}))

        self.assertEqual(first, [derive_seed(0, "ablation", i) for i in range(3)])
        self.assertEqual(first, ablation_seeds(config_from_dict({"seed": 0, "ablation.seeds": [0, 1, 2]})))
        self.assertTrue(set(first).isdisjoint(second))
        self.assertEqual(len(set(first)), 3)


class CommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_count_params(self):
        status, envelope = run_experiment(tiny_config(self.root), "count-params")

        self.assertEqual(status, 0)
        self.assertTrue(envelope["success"])
        data = envelope["data"]
        self.assertEqual(data["mode"], "all")
        self.assertEqual(data["reference_fraction"], REFERENCE_TRAINABLE_FRACTION)
        self.assertGreater(data["trainable"], 0)
        self.assertLess(data["trainable"], data["total"])
        self.assertEqual(json.loads((self.root / "params.json").read_text())["total"], data["total"])
        run = json.loads((self.root / "run.json").read_text())
        self.assertEqual(run["command"], "count-params")
        self.assertEqual(len(run["code_version"]), 40)

    def test_missing_dataset_exits_nonzero(self):
        cfg = tiny_config(self.root, **{"data.path": str(self.root / "absent")})

        status, envelope = run_experiment(cfg, "train")

        self.assertNotEqual(status, 0)
        self.assertFalse(envelope["success"])
        self.assertEqual(envelope["error"]["code"], ErrorCode.DATASET_NOT_FOUND)
        self.assertEqual(json.loads((self.root / "error.json").read_text()), envelope)

    def test_relative_output_dir_lands_under_output_root(self):
        self.assertEqual(resolve_output_dir("ablate-1"), OUTPUT_ROOT / "ablate-1")
        self.assertEqual(resolve_output_dir(str(self.root)), self.root)

    def test_unknown_command(self):
        status, envelope = run_experiment(tiny_config(self.root), "deploy")

        self.assertEqual(status, 1)
        self.assertIn("deploy", envelope["error"]["message"])

    def test_evaluate_needs_checkpoint(self):
        status, envelope = run_experiment(tiny_config(self.root), "evaluate")

        self.assertEqual(status, 1)
        self.assertIn("--checkpoint", envelope["error"]["message"])

    def test_generate_train_evaluate(self):
        status, envelope = run_experiment(tiny_config(self.root / "gen"), "generate-data")
        self.assertEqual(status, 0, msg=envelope)
        data_dir = self.root / "gen" / "data"
        self.assertEqual(envelope["data"]["items"], 30)

        status, envelope = run_experiment(tiny_config(self.root / "train", **{"data.path": str(data_dir)}), "train")
        self.assertEqual(status, 0, msg=envelope)
        self.assertTrue((self.root / "train" / "checkpoint.pt").is_file())
        self.assertEqual(len(pd.read_csv(self.root / "train" / "history.csv")), 1)

        status, envelope = run_experiment(
            tiny_config(self.root / "eval", **{"data.path": str(data_dir)}),
            "evaluate",
            checkpoint=self.root / "train" / "checkpoint.pt",
        )
        self.assertEqual(status, 0, msg=envelope)
        predictions = pd.read_csv(self.root / "eval" / "predictions.csv")
        self.assertEqual(list(predictions.columns), ["label", "prediction", "p0", "p1"])
        self.assertEqual(len(predictions), 3)

    def test_ablate_writes_one_row_per_mode_and_metric(self):
        status, envelope = run_experiment(tiny_config(self.root), "ablate")

        self.assertEqual(status, 0, msg=envelope)
        frame = pd.read_csv(self.root / "ablation.csv")
        self.assertEqual(len(frame), 10)
        self.assertEqual(sorted(frame[frame["metric"] == "auc"]["mode"].tolist()), ["LP"] + ["pathotune"] * 4)
        self.assertTrue((self.root / "ablation.json").is_file())

    def test_sweep_writes_one_record_per_combination(self):
        cfg = tiny_config(
            self.root, **{"sweep.tvp_values": [1, 2], "sweep.ttp_values": [1], "sweep.ivp_values": [0, 1]}
        )

        status, envelope = run_experiment(cfg, "sweep")

        self.assertEqual(status, 0, msg=envelope)
        self.assertEqual(len(pd.read_csv(self.root / "sweep.csv")), 4)

    def test_pretrain_backbone_feeds_a_later_run(self):
        cfg = tiny_config(
            self.root / "pre", **{"pretrain.samples_per_class": 3, "pretrain.epochs": 1, "pretrain.num_classes": 3}
        )
        status, envelope = run_experiment(cfg, "pretrain-backbone")
        self.assertEqual(status, 0, msg=envelope)
        backbone = self.root / "pre" / "backbone.pt"

        lp = tiny_config(self.root / "lp", **{"model.backbone_checkpoint": str(backbone), "train.mode": "LP"})
        status, envelope = run_experiment(lp, "train")
        self.assertEqual(status, 0, msg=envelope)
        self.assertEqual(envelope["data"]["mode"], "LP")


class ManageTests(TestCase):
    def test_main_runs_count_params(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = Path(tmp) / "config.yaml"
            config.write_text(yaml.safe_dump(TINY), encoding="utf-8")

            status = main(["count-params", "--config", str(config), "--out", tmp, "--mode", "LP"])
            params = json.loads((Path(tmp) / "params.json").read_text())

        self.assertEqual(status, 0)
        self.assertEqual(params["mode"], "LP")
        self.assertEqual(params["trainable"], 16 * 2 + 2)

    def test_main_config_error_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = Path(tmp) / "config.yaml"
            config.write_text(yaml.safe_dump({"train.batchsize": 8}), encoding="utf-8")

            self.assertEqual(main(["train", "--config", str(config), "--out", tmp]), 2)


@pytest.mark.slow
class ReproducibilityTests(TestCase):
    def test_same_seed_same_artifacts(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            for name in ("a", "b"):
                status, envelope = run_experiment(tiny_config(root / name, seed=7, **{"train.epochs": 3}), "train")
                self.assertEqual(status, 0, msg=envelope)

            self.assertEqual((root / "a" / "checkpoint.pt").read_bytes(), (root / "b" / "checkpoint.pt").read_bytes())
            self.assertEqual((root / "a" / "history.csv").read_bytes(), (root / "b" / "history.csv").read_bytes())
            first = json.loads((root / "a" / "metrics.json").read_text())
            second = json.loads((root / "b" / "metrics.json").read_text())
            self.assertEqual(first, second)


@pytest.mark.slow
class PretrainConvergenceTests(TestCase):
    def test_default_pretraining_fits_its_source_set(self):
        with tempfile.TemporaryDirectory() as tmp:
            status, envelope = run_experiment(config_from_dict({"output_dir": tmp}), "pretrain-backbone")

        self.assertEqual(status, 0, msg=envelope)
        self.assertEqual(envelope["data"]["epochs"], 60)
        self.assertGreaterEqual(envelope["data"]["train_accuracy"], 0.9)
