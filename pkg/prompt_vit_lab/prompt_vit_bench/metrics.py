"""
Classification metrics

AUC is macro one-vs-rest over the classes that occur in the labels (rank based, ties
at midrank); F1 is the macro mean of per-class F1 over the same classes.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import f1_score, roc_auc_score

from prompt_vit_commons.exceptions import ErrorCode, InputException

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    auc: float
    f1: float
    per_class_auc: dict[int, float] = field(default_factory=dict)
    per_class_f1: dict[int, float] = field(default_factory=dict)
    n_samples: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_score_matrix(scores) -> np.ndarray:
    """(n,) positive-class scores become [1 - s, s]; (n, k) passes through."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        return np.stack([1.0 - scores, scores], axis=1)
    if scores.ndim != 2:
        raise InputException(f"scores must be (n,) or (n, classes), got shape {scores.shape}")
    return scores


def _check_labels(labels, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise InputException("labels must be a non-empty 1-d sequence", ErrorCode.EMPTY_INPUT)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputException(f"labels must be class indices, got dtype {labels.dtype}")
    if labels.min() < 0 or (n_classes is not None and labels.max() >= n_classes):
        raise InputException(
            f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]",
            ErrorCode.LABEL_OUT_OF_RANGE,
        )
    return labels


def per_class_roc_auc(scores, labels) -> tuple[dict[int, float], list[str]]:
    scores = _as_score_matrix(scores)
    labels = _check_labels(labels, scores.shape[1])
    if scores.shape[0] != labels.shape[0]:
        raise InputException(
            f"{scores.shape[0]} score rows for {labels.shape[0]} labels", ErrorCode.LENGTH_MISMATCH
        )
    per_class: dict[int, float] = {}
    warnings: list[str] = []
    for c in range(scores.shape[1]):
        positives = labels == c
        if not positives.any():
            warnings.append(f"class {c} absent from labels; excluded from macro AUC")
            continue
        if positives.all():
            warnings.append(f"class {c} has no negatives; excluded from macro AUC")
            continue
        per_class[c] = float(roc_auc_score(positives.astype(int), scores[:, c]))
    for message in warnings:
        logger.warning(message)
    return per_class, warnings


def roc_auc(scores, labels) -> float:
    """Macro one-vs-rest ROC AUC; NaN when no class is scorable."""
    per_class, _ = per_class_roc_auc(scores, labels)
    if not per_class:
        return float("nan")
    return float(np.mean(list(per_class.values())))


def per_class_f1(predictions, labels) -> dict[int, float]:
    labels = _check_labels(labels)
    predictions = np.asarray(predictions)
    if predictions.shape != labels.shape:
        raise InputException(
            f"{predictions.shape[0] if predictions.ndim else 0} predictions for {labels.shape[0]} labels",
            ErrorCode.LENGTH_MISMATCH,
        )
    present = sorted(int(c) for c in np.unique(labels))
    values = f1_score(labels, predictions, labels=present, average=None, zero_division=0)
    return {c: float(v) for c, v in zip(present, values, strict=True)}


def f1(predictions, labels) -> float:
    return float(np.mean(list(per_class_f1(predictions, labels).values())))


def metric_report(probabilities, labels) -> MetricReport:
    """AUC from class probabilities, F1 from their argmax."""
    matrix = _as_score_matrix(probabilities)
    per_auc, warnings = per_class_roc_auc(matrix, labels)
    per_f1 = per_class_f1(matrix.argmax(axis=1), labels)
    return MetricReport(
        auc=float(np.mean(list(per_auc.values()))) if per_auc else float("nan"),
        f1=float(np.mean(list(per_f1.values()))),
        per_class_auc=per_auc,
        per_class_f1=per_f1,
        n_samples=int(np.asarray(labels).shape[0]),
        warnings=warnings,
    )
