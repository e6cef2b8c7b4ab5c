"""
Grid cell Celery tasks

Each ablation / sweep cell runs as one task:
1. rebuild the bench setup and dataset from the JSON payload
2. train the cell's model
3. evaluate on the held-out part and return the result record
"""

import logging

from celery import group, shared_task

from prompt_vit_commons.exceptions import ConfigurationException
from prompt_vit_synthetic.sources import DatasetSource, materialize

from .cells import BenchSetup, CellKey, CellResult, run_cell

logger = logging.getLogger(__name__)


@shared_task(bind=True)
def run_grid_cell(self, payload: dict) -> dict:
    """
    Args:
        payload: {"setup": BenchSetup dict, "source": DatasetSource dict, "key": CellKey dict}

    Returns:
        dict: CellResult record
    """
    key = CellKey.from_dict(payload["key"])
    logger.info(f"Task {self.request.id}: cell {key}")
    setup = BenchSetup.from_dict(payload["setup"])
    try:
        items = materialize(DatasetSource.from_dict(payload["source"]))
    except Exception as exc:
        logger.exception(f"Task {self.request.id}: dataset for {key.dataset} unavailable")
        return CellResult(key=key, error=f"{type(exc).__name__}: {exc}").to_dict()
    return run_cell(setup, items, key).to_dict()


def dispatch_cells(setup: BenchSetup, datasets: dict, keys: list[CellKey]) -> list[CellResult]:
    """Fan the cells out as one Celery group and collect results in key order."""
    from prompt_vit_lab.celery import app  # noqa: F401  binds shared tasks to the project app

    for name, data in datasets.items():
        if not isinstance(data, DatasetSource):
            raise ConfigurationException(f"dataset '{name}' must be a DatasetSource to run on Celery workers")
    setup_record = setup.to_dict()
    job = group(
        run_grid_cell.s({"setup": setup_record, "source": datasets[key.dataset].to_dict(), "key": key.to_dict()})
        for key in keys
    )
    records = job.apply_async().get(disable_sync_subtasks=False)
    return [CellResult.from_dict(record) for record in records]
