from dataclasses import dataclass

import numpy as np

from prompt_vit_commons.exceptions import InputException


@dataclass
class LabeledPatch:
    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    label: int
    instance_id: str
    slide_id: str = ""


def max_grade(patches: list[LabeledPatch]) -> int:
    if not patches:
        raise InputException("a bag needs at least one patch")
    return max(p.label for p in patches)


@dataclass
class LabeledBag:
    """Slide = bag of patches; slide_label is the highest patch grade."""

    patches: list[LabeledPatch]
    slide_label: int
    slide_id: str

    def __post_init__(self):
        expected = max_grade(self.patches)
        if self.slide_label != expected:
            raise InputException(
                f"slide {self.slide_id!r} labelled {self.slide_label}, but its highest patch grade is {expected}"
            )

    @classmethod
    def from_patches(cls, patches: list[LabeledPatch], slide_id: str) -> "LabeledBag":
        return cls(patches=patches, slide_label=max_grade(patches), slide_id=slide_id)
