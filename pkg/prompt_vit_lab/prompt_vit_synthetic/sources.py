"""Where a dataset comes from: a directory on disk, or a synthetic recipe regenerated on demand."""

from dataclasses import asdict, dataclass, field
from pathlib import Path

from prompt_vit_commons.exceptions import ConfigurationException, ErrorCode, NotFoundException

from .configs import SynthSpec
from .generators import generate_patch_dataset, generate_wsi_bags
from .storage import load_dataset

LEVELS = ("patch", "wsi")


@dataclass(frozen=True)
class DatasetSource:
    name: str = "synthetic"
    path: str | None = None
    spec: SynthSpec = field(default_factory=SynthSpec)
    level: str = "patch"
    num_bags: int = 20
    bag_size_min: int = 4
    bag_size_max: int = 12

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ConfigurationException(f"Unknown data level '{self.level}', expected one of {LEVELS}")

    def to_dict(self) -> dict:
        record = asdict(self)
        record["spec"] = self.spec.to_dict()
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "DatasetSource":
        return cls(**{**record, "spec": SynthSpec(**record["spec"])})


def materialize(source: DatasetSource) -> list:
    """Load the dataset directory, or generate the synthetic set."""
    if source.path:
        path = Path(source.path)
        if not path.exists():
            raise NotFoundException(f"dataset not found: {path}", ErrorCode.DATASET_NOT_FOUND)
        items, _ = load_dataset(path)
        is_bags = bool(items) and hasattr(items[0], "slide_label")
        if is_bags != (source.level == "wsi"):
            raise ConfigurationException(
                f"dataset {path} holds {'slides' if is_bags else 'patches'} but data.level is '{source.level}'"
            )
        return items
    if source.level == "wsi":
        return generate_wsi_bags(source.spec, (source.bag_size_min, source.bag_size_max), source.num_bags)
    return generate_patch_dataset(source.spec)
