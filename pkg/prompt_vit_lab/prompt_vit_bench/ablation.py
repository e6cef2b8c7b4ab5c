"""
Ablation over tuning modes and prompt combinations

Rows are tuning modes (LP, single prompt families, all prompts, optionally FT);
columns are (dataset, metric); each cell aggregates mean and std over seeds x folds.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from prompt_vit_commons.exceptions import InputException
from prompt_vit_commons.renderers import write_json
from prompt_vit_synthetic.sources import DatasetSource
from prompt_vit_training.modes import DEFAULT_ABLATION_GRID, TuningKind, TuningMode

from .cells import BenchSetup, CellKey, CellResult, execute_cells

logger = logging.getLogger(__name__)

METRICS = ("auc", "f1")
CSV_COLUMNS = ["mode", "ttp", "tvp", "ivp", "dataset", "metric", "mean", "std", "n"]


def _flag(on: bool) -> str:
    return "on" if on else "off"


def _percent(mean: float, std: float) -> str:
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def aggregate(values: list[float]) -> tuple[float, float, int]:
    """(mean, sample std, n); std is 0 for a single value and both are NaN for none."""
    finite = [v for v in values if v is not None and not math.isnan(v)]
    if not finite:
        return math.nan, math.nan, 0
    std = float(np.std(finite, ddof=1)) if len(finite) > 1 else 0.0
    return float(np.mean(finite)), std, len(finite)


@dataclass
class AblationTable:
    grid: list[TuningMode]
    datasets: list[str]
    cells: list[CellResult] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(cell.completed for cell in self.cells)

    @property
    def failures(self) -> list[CellResult]:
        return [cell for cell in self.cells if not cell.completed]

    def cell_values(self, mode: TuningMode, dataset: str, metric: str) -> list[float]:
        return [
            getattr(cell, metric)
            for cell in self.cells
            if cell.completed and cell.key.mode == mode.label and cell.key.dataset == dataset
        ]

    def rows(self) -> list[dict]:
        """Long form: one record per (mode, dataset, metric)."""
        records = []
        for mode in self.grid:
            for dataset in self.datasets:
                for metric in METRICS:
                    mean, std, n = aggregate(self.cell_values(mode, dataset, metric))
                    records.append(
                        {
                            "mode": mode.kind.value,
                            "ttp": _flag(mode.ttp_on),
                            "tvp": _flag(mode.tvp_on),
                            "ivp": _flag(mode.ivp_on),
                            "dataset": dataset,
                            "metric": metric,
                            "mean": mean,
                            "std": std,
                            "n": n,
                        }
                    )
        return records

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=CSV_COLUMNS)

    def mean(self, mode: TuningMode, dataset: str, metric: str = "auc") -> float:
        return aggregate(self.cell_values(mode, dataset, metric))[0]

    def render(self) -> str:
        """Percentages, one row per mode, one column per (dataset, metric)."""
        frame = pd.DataFrame(
            {
                (dataset, metric.upper()): [
                    _percent(*aggregate(self.cell_values(mode, dataset, metric))[:2])
                    for mode in self.grid
                ]
                for dataset in self.datasets
                for metric in METRICS
            },
            index=[mode.label for mode in self.grid],
        )
        return frame.to_string()

    def to_dict(self) -> dict:
        return {
            "grid": [mode.label for mode in self.grid],
            "datasets": self.datasets,
            "rows": self.rows(),
            "cells": [cell.to_dict() for cell in self.cells],
        }

    def write(self, directory: Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = directory / "ablation.csv", directory / "ablation.json"
        self.to_frame().to_csv(csv_path, index=False, lineterminator="\n", encoding="utf-8")
        write_json(json_path, self.to_dict())
        return csv_path, json_path


def default_grid(include_full_finetune: bool = False) -> list[TuningMode]:
    grid = list(DEFAULT_ABLATION_GRID)
    if include_full_finetune:
        grid.append(TuningMode.full_finetune())
    return grid


def ablation_keys(grid: list[TuningMode], datasets: list[str], seeds: list[int], setup: BenchSetup) -> list[CellKey]:
    folds = [None] if setup.protocol == "split" else list(range(setup.folds))
    return [
        CellKey(dataset=dataset, mode=mode.label, seed=seed, fold=fold)
        for dataset in datasets
        for mode in grid
        for seed in seeds
        for fold in folds
    ]


def run_ablation(
    grid: list[TuningMode],
    datasets: dict[str, list | DatasetSource],
    seeds: list[int],
    setup: BenchSetup,
    executor: str | None = None,
) -> AblationTable:
    """
    Train one model per (mode, dataset, seed, fold) and aggregate held-out AUC / F1.
    Failed cells are kept on the table with their reason and left out of the means.
    """
    if not grid:
        raise InputException("ablation grid is empty")
    if not seeds:
        raise InputException("ablation needs at least one seed")
    if not datasets:
        raise InputException("ablation needs at least one dataset")
    labels = [mode.label for mode in grid]
    if len(set(labels)) != len(labels):
        raise InputException(f"ablation grid repeats a mode: {labels}")
    if setup.prompt_config.tvp_tokens == 0 and any(m.kind == TuningKind.PATHOTUNE and m.tvp_on for m in grid):
        logger.warning("TVP rows requested with tvp_tokens=0; they carry no visual prompts")

    keys = ablation_keys(grid, list(datasets), seeds, setup)
    repeats = len(keys) // (len(grid) * len(datasets))
    logger.info(f"Ablation: {len(grid)} modes x {len(datasets)} datasets x {repeats} repeats")
    cells = execute_cells(setup, datasets, keys, executor=executor)
    table = AblationTable(grid=list(grid), datasets=list(datasets), cells=cells)
    for failure in table.failures:
        logger.warning(f"Missing cell {failure.key}: {failure.error}")
    return table
