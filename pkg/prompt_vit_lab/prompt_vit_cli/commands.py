"""
Experiment commands

Every artifact-producing command writes run.json (resolved config, seed, code hash)
into the output directory first, then its own reports. Failures leave error.json with
the same envelope the command prints.
"""

import logging
from dataclasses import replace
from enum import StrEnum
from pathlib import Path

import pandas as pd

from prompt_vit_bench.ablation import default_grid, run_ablation
from prompt_vit_bench.cells import BenchSetup
from prompt_vit_bench.sweep import prompt_sweep
from prompt_vit_commons.exceptions import BaseLabException, ErrorCode, InputException, custom_exception_handler
from prompt_vit_commons.renderers import render_result, write_json
from prompt_vit_commons.seeding import derive_seed
from prompt_vit_commons.versioning import code_version_hash
from prompt_vit_lab.settings import OUTPUT_ROOT
from prompt_vit_synthetic.configs import SynthSpec
from prompt_vit_synthetic.generators import generate_patch_dataset
from prompt_vit_synthetic.sources import materialize
from prompt_vit_synthetic.storage import write_dataset
from prompt_vit_training.checkpoints import (
    checkpoint_record,
    load_backbone_weights,
    load_checkpoint,
    restore_model,
    save_backbone,
    save_checkpoint,
)
from prompt_vit_training.counting import analytic_parameter_count
from prompt_vit_training.models import build_model
from prompt_vit_training.modes import TuningMode
from prompt_vit_training.splits import split_dataset
from prompt_vit_training.trainer import TrainConfig, evaluate, fit, item_label

from .configs import (
    ExperimentConfig,
    ablation_seeds,
    config_to_dict,
    dataset_source,
    model_config,
    prompt_config,
    train_config,
    tuning_mode,
)

logger = logging.getLogger(__name__)

# Trainable share quoted for the ViT-S configuration, shown next to our own count
REFERENCE_TRAINABLE_FRACTION = 0.059


class Command(StrEnum):
    GENERATE_DATA = "generate-data"
    TRAIN = "train"
    EVALUATE = "evaluate"
    ABLATE = "ablate"
    SWEEP = "sweep"
    COUNT_PARAMS = "count-params"
    PRETRAIN_BACKBONE = "pretrain-backbone"


class IncompleteRunException(BaseLabException):
    default_detail = "Some grid cells did not complete."
    error_code = ErrorCode.CELL_FAILED


def write_run_record(cfg: ExperimentConfig, command: Command, out: Path) -> Path:
    path = out / "run.json"
    write_json(
        path,
        {
            "command": command.value,
            "config": config_to_dict(cfg),
            "seed": cfg.seed,
            "code_version": code_version_hash(),
        },
    )
    return path


def bench_setup(cfg: ExperimentConfig) -> BenchSetup:
    return BenchSetup(
        model_config=model_config(cfg),
        prompt_config=prompt_config(cfg),
        train_config=train_config(cfg),
        level=cfg.data.level,
        encoder_name=cfg.ttp.encoder,
        encoder_dim=cfg.ttp.encoder_dim,
        protocol=cfg.ablation.protocol,
        folds=cfg.ablation.folds,
        backbone_checkpoint=cfg.model.backbone_checkpoint,
    )


def _build(cfg: ExperimentConfig, mode: TuningMode | None = None):
    model = build_model(
        model_config(cfg),
        prompt_config(cfg),
        mode or tuning_mode(cfg),
        level=cfg.data.level,
        seed=cfg.seed,
        encoder_name=cfg.ttp.encoder,
        encoder_dim=cfg.ttp.encoder_dim,
    )
    if cfg.model.backbone_checkpoint:
        load_backbone_weights(model.backbone, Path(cfg.model.backbone_checkpoint))
    return model


def _check_labels(items: list, num_classes: int) -> None:
    labels = {item_label(item) for item in items}
    if max(labels) >= num_classes or min(labels) < 0:
        raise InputException(
            f"dataset labels {sorted(labels)} do not fit data.num_classes={num_classes}", ErrorCode.LABEL_OUT_OF_RANGE
        )


def _load_items(cfg: ExperimentConfig) -> list:
    items = materialize(dataset_source(cfg))
    _check_labels(items, cfg.data.num_classes)
    return items


def generate_data(cfg: ExperimentConfig, out: Path) -> dict:
    source = dataset_source(cfg, path="")
    items = materialize(source)
    manifest = write_dataset(items, out / "data", source.spec)
    return {"path": manifest.parent, "items": len(items)}


def train(cfg: ExperimentConfig, out: Path) -> dict:
    items = _load_items(cfg)
    train_items, val_items, test_items = split_dataset(items, seed=derive_seed(cfg.seed, "split"))
    model = _build(cfg)
    tc = train_config(cfg)
    state, history = fit(train_items, model, tc, validation=val_items)
    result = evaluate(model, test_items, cfg=tc)

    save_checkpoint(
        out / "checkpoint.pt",
        checkpoint_record(
            model,
            model_config(cfg),
            prompt_config(cfg),
            tc.to_dict(),
            tc.mode,
            state.step,
            seed=cfg.seed,
            encoder_name=cfg.ttp.encoder,
            encoder_dim=cfg.ttp.encoder_dim,
        ),
    )
    pd.DataFrame(history.to_dict()["records"]).to_csv(
        out / "history.csv", index=False, lineterminator="\n", encoding="utf-8"
    )
    metrics = {
        "mode": tc.mode.label,
        "test": result.report.to_dict(),
        "history": history.to_dict(),
        "steps": state.step,
    }
    write_json(out / "metrics.json", metrics)
    return metrics


def evaluate_checkpoint(cfg: ExperimentConfig, out: Path, checkpoint: Path | None) -> dict:
    if checkpoint is None:
        raise InputException("evaluate needs --checkpoint")
    record = load_checkpoint(checkpoint)
    model = restore_model(record)
    items = _load_items(cfg)
    _, _, test_items = split_dataset(items, seed=derive_seed(record["seed"], "split"))
    tc = TrainConfig.from_dict(record["train_config"])
    result = evaluate(model, test_items, cfg=tc)
    frame = pd.DataFrame(result.probabilities, columns=[f"p{c}" for c in range(result.probabilities.shape[1])])
    frame.insert(0, "prediction", result.predictions)
    frame.insert(0, "label", result.labels)
    frame.to_csv(out / "predictions.csv", index=False, lineterminator="\n", encoding="utf-8")
    metrics = {"mode": record["mode"], "checkpoint": str(checkpoint), "test": result.report.to_dict()}
    write_json(out / "metrics.json", metrics)
    return metrics


def ablate(cfg: ExperimentConfig, out: Path) -> dict:
    datasets = {cfg.data.name: dataset_source(cfg)}
    for extra in cfg.ablation.extra_datasets:
        name = Path(extra).name
        datasets[name] = dataset_source(cfg, path=extra, name=name)
    table = run_ablation(
        default_grid(cfg.ablation.include_full_finetune), datasets, ablation_seeds(cfg), bench_setup(cfg)
    )
    csv_path, json_path = table.write(out)
    logger.info(f"Ablation results (%)\n{table.render()}")
    if not table.complete:
        raise IncompleteRunException(
            f"{len(table.failures)} of {len(table.cells)} cells failed: "
            + "; ".join(
                f"{cell.key.mode}/{cell.key.dataset}/seed {cell.key.seed}: {cell.error}" for cell in table.failures
            )
        )
    return {"csv": csv_path, "json": json_path, "rows": table.rows()}


def sweep(cfg: ExperimentConfig, out: Path) -> dict:
    table = prompt_sweep(
        dataset_source(cfg),
        list(cfg.sweep.tvp_values),
        list(cfg.sweep.ttp_values),
        list(cfg.sweep.ivp_values),
        bench_setup(cfg),
        seed=cfg.seed,
        dataset_name=cfg.data.name,
    )
    path = table.write(out)
    if not table.complete:
        failed = [cell for cell in table.cells if not cell.completed]
        raise IncompleteRunException(f"{len(failed)} of {len(table.cells)} sweep cells failed")
    return {"csv": path, "records": table.records()}


def count_params(cfg: ExperimentConfig, out: Path) -> dict:
    count = analytic_parameter_count(
        model_config(cfg), prompt_config(cfg), tuning_mode(cfg), level=cfg.data.level, encoder_dim=cfg.ttp.encoder_dim
    )
    result = {**count.to_dict(), "mode": tuning_mode(cfg).label, "reference_fraction": REFERENCE_TRAINABLE_FRACTION}
    write_json(out / "params.json", result)
    return result


def pretrain_backbone(cfg: ExperimentConfig, out: Path) -> dict:
    """Fully train backbone + throwaway head on a source-domain set, keep the backbone."""
    section = cfg.pretrain
    spec = SynthSpec(
        num_classes=section.num_classes,
        samples_per_class=section.samples_per_class,
        image_size=model_config(cfg).image_size,
        stain_family=section.stain_family,
        instance_gap_strength=section.instance_gap_strength,
        texture_scale=section.texture_scale,
        seed=derive_seed(cfg.seed, "pretrain-data") & 0xFFFF_FFFF,
    )
    items = generate_patch_dataset(spec)
    source_config = replace(model_config(cfg), num_classes=section.num_classes)
    model = build_model(source_config, prompt_config(cfg), TuningMode.full_finetune(), seed=cfg.seed)
    tc = TrainConfig(
        learning_rate=section.learning_rate,
        batch_size=section.batch_size,
        epochs=section.epochs,
        seed=cfg.seed,
        mode=TuningMode.full_finetune(),
    )
    _, history = fit(items, model, tc)
    path = save_backbone(out / "backbone.pt", model.backbone)
    final = history.records[-1] if history.records else None
    return {
        "path": path,
        "epochs": len(history),
        "train_loss": final.train_loss if final else None,
        "train_accuracy": final.train_accuracy if final else None,
    }


def resolve_output_dir(output_dir: str) -> Path:
    """Relative run directories live under OUTPUT_ROOT."""
    path = Path(output_dir)
    return path if path.is_absolute() else OUTPUT_ROOT / path


def run_experiment(cfg: ExperimentConfig, command: str, checkpoint: Path | None = None) -> tuple[int, dict]:
    """
    Run one command. Returns (exit status, envelope); status is 0 only when the
    command, and every grid cell it ran, completed.
    """
    out = resolve_output_dir(cfg.output_dir)
    try:
        command = Command(command)
    except ValueError:
        return _fail(InputException(f"Unknown command '{command}', expected one of {[c.value for c in Command]}"), out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_run_record(cfg, command, out)
        logger.info(f"Running {command.value} (seed {cfg.seed}) into {out}")
        if command == Command.GENERATE_DATA:
            data = generate_data(cfg, out)
        elif command == Command.TRAIN:
            data = train(cfg, out)
        elif command == Command.EVALUATE:
            data = evaluate_checkpoint(cfg, out, checkpoint)
        elif command == Command.ABLATE:
            data = ablate(cfg, out)
        elif command == Command.SWEEP:
            data = sweep(cfg, out)
        elif command == Command.COUNT_PARAMS:
            data = count_params(cfg, out)
        else:
            data = pretrain_backbone(cfg, out)
    except Exception as exc:
        return _fail(exc, out)
    return 0, render_result(data)


def _fail(exc: BaseException, out: Path) -> tuple[int, dict]:
    envelope = custom_exception_handler(exc)
    try:
        write_json(out / "error.json", envelope)
    except OSError:
        logger.exception(f"Could not write error record to {out}")
    return 1, envelope
