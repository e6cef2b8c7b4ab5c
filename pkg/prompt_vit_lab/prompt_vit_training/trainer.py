"""
Adaptation training loop

Cross-entropy over the labelled patches (or slides), optimized with RAdam on the
trainable partition only. Frozen parameters never see a gradient and never enter the
optimizer, so they stay bit-identical through any number of steps.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from prompt_vit_backbone.models import images_to_tensor
from prompt_vit_bench.metrics import MetricReport, metric_report
from prompt_vit_commons.exceptions import ConfigurationException, ContractViolationException, ErrorCode, InputException
from prompt_vit_commons.seeding import numpy_rng, torch_generator

from .models import AdaptationModel, ParamPartition, partition_params
from .modes import TuningMode

logger = logging.getLogger(__name__)


class OptimizerKind(StrEnum):
    RADAM = "radam"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.RADAM
    mode: TuningMode = field(default_factory=TuningMode)
    patience: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_patches_per_bag: int = 64

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationException(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationException(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationException(f"epochs must be >= 0, got {self.epochs}")
        if self.patience < 0:
            raise ConfigurationException(f"patience must be >= 0, got {self.patience}")
        if self.max_patches_per_bag < 1:
            raise ConfigurationException(f"max_patches_per_bag must be >= 1, got {self.max_patches_per_bag}")
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))

    def to_dict(self) -> dict:
        record = asdict(self)
        record["optimizer"] = self.optimizer.value
        record["mode"] = self.mode.label
        record["betas"] = list(self.betas)
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "TrainConfig":
        values = dict(record)
        if isinstance(values.get("mode"), str):
            values["mode"] = TuningMode.from_label(values["mode"])
        if "betas" in values:
            values["betas"] = tuple(values["betas"])
        return cls(**values)

    def with_mode(self, mode: TuningMode, seed: int | None = None) -> "TrainConfig":
        return replace(self, mode=mode, seed=self.seed if seed is None else seed)


@dataclass
class TrainState:
    """Mutable training state, owned by one training loop."""

    model: AdaptationModel
    partition: ParamPartition
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    step: int = 0
    epoch: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_auc: float | None = None
    val_f1: float | None = None


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records], "best_epoch": self.best_epoch}


@dataclass
class EvalResult:
    report: MetricReport
    probabilities: np.ndarray  # (n, num_classes)
    predictions: np.ndarray
    labels: np.ndarray


def loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """
    Mean softmax cross-entropy.

    Args:
        logits: (B, K) or (K,) class logits
        labels: class indices, one per logit row
    """
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device).reshape(-1)
    if labels.shape[0] != logits.shape[0]:
        raise InputException(f"{labels.shape[0]} labels for {logits.shape[0]} logit rows", ErrorCode.LENGTH_MISMATCH)
    num_classes = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputException(
            f"label out of range [0, {num_classes}): {labels.tolist()}", ErrorCode.LABEL_OUT_OF_RANGE
        )
    return F.cross_entropy(logits, labels)


def build_optimizer(partition: ParamPartition, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = list(partition.trainable.values())
    if cfg.optimizer == OptimizerKind.RADAM:
        return torch.optim.RAdam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps, foreach=False)
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps, foreach=False)


def init_train_state(model: AdaptationModel, cfg: TrainConfig) -> TrainState:
    partition = partition_params(model, cfg.mode)
    return TrainState(
        model=model,
        partition=partition,
        optimizer=build_optimizer(partition, cfg),
        generator=torch_generator(cfg.seed, "shuffle"),
    )


def optimizer_step(state: TrainState, grads: dict[str, torch.Tensor], cfg: TrainConfig | None = None) -> TrainState:
    """
    Apply one optimizer update from named gradients.

    `grads` must name exactly the trainable parameters; a gradient for a frozen
    parameter is a contract violation. When `cfg` is given its learning rate is used.
    """
    trainable = state.partition.trainable
    frozen_hits = sorted(set(grads) & set(state.partition.frozen))
    if frozen_hits:
        raise ContractViolationException(
            f"gradient supplied for frozen parameters: {frozen_hits}", ErrorCode.FROZEN_PARAMETER_GRADIENT
        )
    unknown = sorted(set(grads) - set(trainable))
    missing = sorted(set(trainable) - set(grads))
    if unknown or missing:
        raise ContractViolationException(
            f"gradients must cover the trainable set: unknown={unknown}, missing={missing}"
        )

    if cfg is not None:
        for group in state.optimizer.param_groups:
            group["lr"] = cfg.learning_rate
    for name, param in trainable.items():
        param.grad = grads[name].detach().to(param.dtype).reshape(param.shape).clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return state


def trainable_grads(batch_loss: torch.Tensor, partition: ParamPartition) -> dict[str, torch.Tensor]:
    """d(loss)/d(param) for every trainable parameter; unreached parameters get zeros."""
    names = list(partition.trainable)
    params = [partition.trainable[name] for name in names]
    if not params:
        return {}
    grads = torch.autograd.grad(batch_loss, params, allow_unused=True)
    return {
        name: grad if grad is not None else torch.zeros_like(param)
        for name, param, grad in zip(names, params, grads, strict=True)
    }


def item_label(item) -> int:
    return int(item.slide_label if hasattr(item, "slide_label") else item.label)


def bag_images(bag) -> list:
    return [p.image if hasattr(p, "image") else p for p in bag.patches]


class PatchDataset(Dataset):
    def __init__(self, items: list):
        self.items = items

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int):
        item = self.items[index]
        return images_to_tensor(item.image)[0], item_label(item)


class BagDataset(Dataset):
    """Bags capped at `max_patches` members, subsampled with a per-bag seed."""

    def __init__(self, items: list, max_patches: int, seed: int = 0):
        self.items = items
        self.max_patches = max_patches
        self.seed = seed

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int):
        bag = self.items[index]
        images = bag_images(bag)
        if len(images) > self.max_patches:
            rng = numpy_rng(self.seed, "bag-subsample", index)
            keep = np.sort(rng.choice(len(images), self.max_patches, replace=False))
            images = [images[i] for i in keep]
        return images_to_tensor(np.stack(images)), item_label(bag)


def _collate_bags(batch: list) -> tuple[list, torch.Tensor]:
    return [images for images, _ in batch], torch.tensor([label for _, label in batch], dtype=torch.long)


def make_loader(
    items: list, model: AdaptationModel, cfg: TrainConfig, generator: torch.Generator | None, shuffle: bool
) -> DataLoader:
    if model.level == "wsi":
        dataset: Dataset = BagDataset(items, cfg.max_patches_per_bag, seed=cfg.seed)
        return DataLoader(
            dataset, batch_size=cfg.batch_size, shuffle=shuffle, generator=generator, collate_fn=_collate_bags
        )
    return DataLoader(PatchDataset(items), batch_size=cfg.batch_size, shuffle=shuffle, generator=generator)


def forward_batch(model: AdaptationModel, inputs) -> torch.Tensor:
    if model.level == "wsi":
        return torch.stack([model.forward_bag(images) for images in inputs])
    return model(inputs)


def _snapshot(partition: ParamPartition) -> dict[str, torch.Tensor]:
    return {name: param.detach().clone() for name, param in partition.trainable.items()}


def _restore(partition: ParamPartition, snapshot: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for name, value in snapshot.items():
            partition.trainable[name].copy_(value)


def fit(
    dataset: list, model: AdaptationModel, cfg: TrainConfig, validation: list | None = None
) -> tuple[TrainState, History]:
    """
    Train `model` in `cfg.mode` for `cfg.epochs` epochs of reshuffled mini-batches
    (last partial batch kept). With a validation set, each epoch records AUC/F1 and
    the best-AUC parameters are restored at the end; `cfg.patience` > 0 stops early.
    """
    if not dataset:
        raise InputException("training set is empty", ErrorCode.EMPTY_INPUT)

    state = init_train_state(model, cfg)
    loader = make_loader(dataset, model, cfg, state.generator, shuffle=True)
    history = History()
    best_auc, best_params, stale = -math.inf, None, 0

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total_loss, correct, seen = 0.0, 0, 0
        for inputs, labels in loader:
            logits = forward_batch(model, inputs)
            batch_loss = loss(logits, labels)
            optimizer_step(state, trainable_grads(batch_loss, state.partition))
            total_loss += batch_loss.item() * labels.shape[0]
            correct += int((logits.argmax(dim=-1) == labels).sum())
            seen += labels.shape[0]
        state.epoch = epoch

        record = EpochRecord(epoch=epoch, train_loss=total_loss / seen, train_accuracy=correct / seen)
        if validation:
            report = evaluate(model, validation, batch_size=cfg.batch_size, cfg=cfg).report
            record.val_auc, record.val_f1 = report.auc, report.f1
            score = report.auc if not math.isnan(report.auc) else -math.inf
            if best_params is None or score > best_auc:
                best_auc, best_params, stale = score, _snapshot(state.partition), 0
                history.best_epoch = epoch
            else:
                stale += 1
        history.records.append(record)
        logger.info(
            f"[{cfg.mode.label}] epoch {epoch}/{cfg.epochs} loss={record.train_loss:.4f} "
            f"acc={record.train_accuracy:.3f} val_auc={record.val_auc} val_f1={record.val_f1}"
        )
        if cfg.patience and stale >= cfg.patience:
            logger.info(f"[{cfg.mode.label}] early stop after epoch {epoch}, best epoch {history.best_epoch}")
            break

    if best_params is not None:
        _restore(state.partition, best_params)
    return state, history


def evaluate(model: AdaptationModel, items: list, batch_size: int = 64, cfg: TrainConfig | None = None) -> EvalResult:
    """Class probabilities and the AUC/F1 report for `items`."""
    if not items:
        raise InputException("evaluation set is empty", ErrorCode.EMPTY_INPUT)
    cfg = cfg or TrainConfig(batch_size=batch_size)
    loader = make_loader(items, model, cfg, generator=None, shuffle=False)
    model.eval()
    chunks, labels = [], []
    with torch.no_grad():
        for inputs, batch_labels in loader:
            chunks.append(forward_batch(model, inputs).softmax(dim=-1).double().cpu().numpy())
            labels.append(batch_labels.numpy())
    probabilities = np.concatenate(chunks)
    label_array = np.concatenate(labels)
    return EvalResult(
        report=metric_report(probabilities, label_array),
        probabilities=probabilities,
        predictions=probabilities.argmax(axis=1),
        labels=label_array,
    )
