"""
Grid cells

One cell = one (dataset, tuning mode, prompt counts, seed, fold) training run, evaluated
on its held-out part. Cells are independent and may run inline or as Celery tasks.
"""

import logging
from dataclasses import asdict, dataclass, replace

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_commons.exceptions import BaseLabException, ConfigurationException
from prompt_vit_commons.seeding import derive_seed
from prompt_vit_lab.settings import ABLATION_EXECUTOR
from prompt_vit_prompts.configs import PromptConfig
from prompt_vit_synthetic.sources import DatasetSource, materialize
from prompt_vit_training.checkpoints import load_backbone_weights
from prompt_vit_training.models import build_model
from prompt_vit_training.modes import TuningMode
from prompt_vit_training.splits import kfold, split_dataset
from prompt_vit_training.trainer import TrainConfig, evaluate, fit

logger = logging.getLogger(__name__)

PROTOCOLS = ("split", "kfold")


@dataclass(frozen=True)
class BenchSetup:
    """Everything a cell needs besides its data and its key."""

    model_config: ModelConfig
    prompt_config: PromptConfig
    train_config: TrainConfig
    level: str = "patch"
    encoder_name: str = "hashed-trigram"
    encoder_dim: int = 768
    protocol: str = "split"
    folds: int = 4
    backbone_checkpoint: str | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigurationException(f"Unknown protocol '{self.protocol}', expected one of {PROTOCOLS}")

    @property
    def repeats_per_seed(self) -> int:
        return self.folds if self.protocol == "kfold" else 1

    def with_prompts(self, prompt_config: PromptConfig) -> "BenchSetup":
        return replace(self, prompt_config=prompt_config)

    def to_dict(self) -> dict:
        return {
            "model_config": self.model_config.to_dict(),
            "prompt_config": self.prompt_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "level": self.level,
            "encoder_name": self.encoder_name,
            "encoder_dim": self.encoder_dim,
            "protocol": self.protocol,
            "folds": self.folds,
            "backbone_checkpoint": self.backbone_checkpoint,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "BenchSetup":
        return cls(
            **{
                **record,
                "model_config": ModelConfig(**record["model_config"]),
                "prompt_config": PromptConfig(**record["prompt_config"]),
                "train_config": TrainConfig.from_dict(record["train_config"]),
            }
        )


@dataclass(frozen=True)
class CellKey:
    dataset: str
    mode: str  # TuningMode label
    seed: int
    fold: int | None = None
    counts: tuple[int, int, int] | None = None  # (N, T, M) override for sweeps

    @property
    def tuning_mode(self) -> TuningMode:
        return TuningMode.from_label(self.mode)

    def to_dict(self) -> dict:
        record = asdict(self)
        record["counts"] = list(self.counts) if self.counts is not None else None
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "CellKey":
        counts = record.get("counts")
        return cls(**{**record, "counts": tuple(counts) if counts is not None else None})


@dataclass
class CellResult:
    key: CellKey
    auc: float | None = None
    f1: float | None = None
    n_eval: int = 0
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {"key": self.key.to_dict(), "auc": self.auc, "f1": self.f1, "n_eval": self.n_eval, "error": self.error}

    @classmethod
    def from_dict(cls, record: dict) -> "CellResult":
        return cls(**{**record, "key": CellKey.from_dict(record["key"])})


def cell_partitions(items: list, setup: BenchSetup, seed: int, fold: int | None) -> tuple[list, list | None, list]:
    """
    (train, validation, evaluation) parts for one cell.

    split: 7:2:1 train / val / test, test evaluated.
    kfold: folds over train + val, the fold's validation part evaluated.
    """
    train, val, test = split_dataset(items, seed=derive_seed(seed, "split"))
    if setup.protocol == "split":
        return train, val, test
    folds = kfold(train + val, k=setup.folds, seed=derive_seed(seed, "kfold"))
    fold_train, fold_val = folds[fold or 0]
    return fold_train, None, fold_val


def run_cell(setup: BenchSetup, items: list, key: CellKey) -> CellResult:
    """Train and evaluate one cell; any failure is recorded on the result, not raised."""
    logger.info(f"Cell start: {key}")
    try:
        mode = key.tuning_mode
        if key.counts is not None:
            setup = setup.with_prompts(setup.prompt_config.with_counts(*key.counts))
        train, val, held_out = cell_partitions(items, setup, key.seed, key.fold)
        model = build_model(
            setup.model_config,
            setup.prompt_config,
            mode,
            level=setup.level,
            seed=key.seed,
            encoder_name=setup.encoder_name,
            encoder_dim=setup.encoder_dim,
        )
        if setup.backbone_checkpoint:
            load_backbone_weights(model.backbone, setup.backbone_checkpoint)
        train_config = setup.train_config.with_mode(mode, seed=key.seed)
        fit(train, model, train_config, validation=val)
        report = evaluate(model, held_out, cfg=train_config).report
    except BaseLabException as exc:
        logger.error(f"Cell failed: {key}: {exc.detail}")
        return CellResult(key=key, error=f"{exc.error_code}: {exc.detail}")
    except Exception as exc:
        logger.exception(f"Cell failed: {key}")
        return CellResult(key=key, error=f"{type(exc).__name__}: {exc}")
    logger.info(f"Cell done: {key} auc={report.auc:.4f} f1={report.f1:.4f}")
    return CellResult(key=key, auc=report.auc, f1=report.f1, n_eval=report.n_samples)


def execute_cells(
    setup: BenchSetup, datasets: dict[str, list | DatasetSource], keys: list[CellKey], executor: str | None = None
) -> list[CellResult]:
    """
    Run `keys` inline ("local") or as a Celery group ("celery"). Celery needs every
    dataset as a DatasetSource so workers can rebuild it from a JSON payload.
    """
    executor = executor or ABLATION_EXECUTOR
    if executor == "celery":
        from .tasks import dispatch_cells

        return dispatch_cells(setup, datasets, keys)
    if executor != "local":
        raise ConfigurationException(f"Unknown executor '{executor}', expected 'local' or 'celery'")

    resolved = {name: materialize(data) if isinstance(data, DatasetSource) else data for name, data in datasets.items()}
    return [run_cell(setup, resolved[key.dataset], key) for key in keys]
