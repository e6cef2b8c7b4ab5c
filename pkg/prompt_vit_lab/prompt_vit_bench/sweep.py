import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from prompt_vit_commons.exceptions import InputException
from prompt_vit_synthetic.sources import DatasetSource
from prompt_vit_training.modes import TuningMode

from .cells import BenchSetup, CellKey, CellResult, execute_cells

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["N", "T", "M", "auc", "f1"]


@dataclass
class SweepTable:
    cells: list[CellResult] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(cell.completed for cell in self.cells)

    def records(self) -> list[dict]:
        return [
            {
                "N": cell.key.counts[0],
                "T": cell.key.counts[1],
                "M": cell.key.counts[2],
                "auc": cell.auc,
                "f1": cell.f1,
            }
            for cell in self.cells
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records(), columns=SWEEP_COLUMNS)

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "sweep.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
        return path


def prompt_sweep(
    dataset: list | DatasetSource,
    n_values: list[int],
    t_values: list[int],
    m_values: list[int],
    setup: BenchSetup,
    seed: int = 0,
    dataset_name: str = "synthetic",
    executor: str | None = None,
) -> SweepTable:
    """
    One prompt-tuning run per (N, T, M) combination. A zero count switches that prompt
    family off, so M = 0 isolates TVP + TTP.
    """
    for name, values in (("N", n_values), ("T", t_values), ("M", m_values)):
        if not values:
            raise InputException(f"sweep needs at least one {name} value")
        if any(v < 0 for v in values):
            raise InputException(f"sweep {name} values must be >= 0, got {values}")

    keys = [
        CellKey(
            dataset=dataset_name,
            mode=TuningMode.pathotune(tvp_on=n > 0, ttp_on=t > 0, ivp_on=m > 0).label,
            seed=seed,
            fold=None if setup.protocol == "split" else 0,
            counts=(n, t, m),
        )
        for n, t, m in itertools.product(n_values, t_values, m_values)
    ]
    logger.info(f"Prompt sweep over {len(keys)} (N, T, M) combinations")
    return SweepTable(cells=execute_cells(setup, {dataset_name: dataset}, keys, executor=executor))
