"""Central finite-difference checks of analytic gradients, per parameter group."""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import torch

from .models import ParamGroup, ParamPartition, parameter_group


@dataclass
class GroupCheck:
    group: ParamGroup
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def relative_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(closure: Callable[[], torch.Tensor], param: torch.Tensor, indices, delta: float = 1e-6) -> np.ndarray:
    """(f(x + d) - f(x - d)) / 2d at the given flat coordinates of `param`."""
    flat = param.data.view(-1)
    grads = np.zeros(len(indices))
    with torch.no_grad():
        for k, index in enumerate(indices):
            original = flat[index].item()
            flat[index] = original + delta
            upper = closure().item()
            flat[index] = original - delta
            lower = closure().item()
            flat[index] = original
            grads[k] = (upper - lower) / (2.0 * delta)
    return grads


def check_groups(
    closure: Callable[[], torch.Tensor],
    partition: ParamPartition,
    samples_per_param: int = 6,
    delta: float = 1e-6,
    seed: int = 0,
) -> dict[ParamGroup, GroupCheck]:
    """
    Compare autograd against central differences on sampled coordinates of every
    trainable parameter. Run the model in float64.
    """
    rng = np.random.default_rng(seed)
    names = sorted(partition.trainable)
    params = [partition.trainable[name] for name in names]
    analytic_all = torch.autograd.grad(closure(), params, allow_unused=True)

    collected: dict[ParamGroup, tuple[list, list]] = {}
    for name, param, grad in zip(names, params, analytic_all, strict=True):
        grad = torch.zeros_like(param) if grad is None else grad
        count = min(samples_per_param, param.numel())
        indices = rng.choice(param.numel(), count, replace=False)
        analytic = grad.detach().reshape(-1)[torch.as_tensor(indices)].double().numpy()
        numeric = numeric_grad(closure, param, indices.tolist(), delta=delta)
        bucket = collected.setdefault(parameter_group(name), ([], []))
        bucket[0].append(analytic)
        bucket[1].append(numeric)
    return {
        group: GroupCheck(group, np.concatenate(analytic), np.concatenate(numeric))
        for group, (analytic, numeric) in collected.items()
    }
