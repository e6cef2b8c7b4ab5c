from dataclasses import asdict, dataclass
from enum import StrEnum

from prompt_vit_commons.exceptions import ConfigurationException


class StainFamily(StrEnum):
    HE_LIKE = "HE_LIKE"
    IHC_LIKE = "IHC_LIKE"


@dataclass(frozen=True)
class SynthSpec:
    """
    Synthetic dataset recipe.

    Class c is encoded as square-wave striation at texture_scale * (1 + c) cycles per
    image width, along a random axis. Every image is then colored by its own stain,
    perturbed around the family base by instance_gap_strength.
    """

    num_classes: int = 4
    samples_per_class: int = 25
    image_size: int = 32
    stain_family: StainFamily = StainFamily.HE_LIKE
    instance_gap_strength: float = 0.1
    texture_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationException(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise ConfigurationException(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.image_size < 4:
            raise ConfigurationException(f"image_size must be >= 4, got {self.image_size}")
        if self.instance_gap_strength < 0:
            raise ConfigurationException(f"instance_gap_strength must be >= 0, got {self.instance_gap_strength}")
        if self.texture_scale <= 0:
            raise ConfigurationException(f"texture_scale must be > 0, got {self.texture_scale}")
        try:
            object.__setattr__(self, "stain_family", StainFamily(self.stain_family))
        except ValueError as exc:
            raise ConfigurationException(
                f"Unknown stain family '{self.stain_family}', expected one of {[f.value for f in StainFamily]}"
            ) from exc

    @property
    def stain_name(self) -> str:
        """Stain as written into the textual prompt template."""
        return "HE" if self.stain_family == StainFamily.HE_LIKE else "IHC"

    def to_dict(self) -> dict:
        record = asdict(self)
        record["stain_family"] = self.stain_family.value
        return record
