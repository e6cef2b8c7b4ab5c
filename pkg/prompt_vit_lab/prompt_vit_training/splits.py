import numpy as np
from sklearn.model_selection import KFold

from prompt_vit_commons.exceptions import ErrorCode, InputException

DEFAULT_RATIOS = (7, 2, 1)


def largest_remainder(total: int, ratios: tuple[int, ...]) -> list[int]:
    """Integer sizes summing to `total`, each within 1 of its exact quota."""
    weight = sum(ratios)
    quotas = [total * r / weight for r in ratios]
    sizes = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(sizes)
    by_remainder = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    return sizes


def split_dataset(items: list, ratios: tuple[int, ...] = DEFAULT_RATIOS, seed: int = 0) -> tuple[list, list, list]:
    """
    Shuffle and cut into train / validation / test parts.

    Args:
        items: dataset items (patches or bags)
        ratios: relative sizes, 7:2:1 by default
        seed: permutation seed

    Returns:
        tuple: (train, val, test) lists, disjoint and covering `items`
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise InputException(f"ratios must be three non-negative weights, got {ratios}")
    if len(items) < 10:
        raise InputException(f"need at least 10 items to split, got {len(items)}", ErrorCode.TOO_FEW_ITEMS)
    order = np.random.default_rng(seed).permutation(len(items))
    n_train, n_val, _ = largest_remainder(len(items), tuple(ratios))
    picked = [items[i] for i in order]
    return picked[:n_train], picked[n_train : n_train + n_val], picked[n_train + n_val :]


def kfold(items: list, k: int = 4, seed: int = 0) -> list[tuple[list, list]]:
    """k shuffled (train, val) folds; validation parts partition `items`."""
    if k < 2:
        raise InputException(f"kfold needs k >= 2, got {k}")
    if len(items) < k:
        raise InputException(f"need at least {k} items for {k} folds, got {len(items)}", ErrorCode.TOO_FEW_ITEMS)
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed % (2**32))
    return [
        ([items[i] for i in train_index], [items[i] for i in val_index])
        for train_index, val_index in splitter.split(np.arange(len(items)))
    ]
