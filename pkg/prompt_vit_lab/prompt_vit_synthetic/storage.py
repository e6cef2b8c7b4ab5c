"""
Dataset directory layout

    images/<instance_id>.png   8-bit RGB
    manifest.csv               path,label,slide_id (slide_id empty for patch-level sets)
    spec.json                  SynthSpec used for generation, when known
"""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from prompt_vit_commons.exceptions import ErrorCode, InputException, NotFoundException
from prompt_vit_commons.renderers import write_json

from .configs import SynthSpec
from .models import LabeledBag, LabeledPatch

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["path", "label", "slide_id"]


def _flatten(items: list) -> list[LabeledPatch]:
    patches = []
    for item in items:
        if isinstance(item, LabeledBag):
            for patch in item.patches:
                patch.slide_id = item.slide_id
                patches.append(patch)
        else:
            patches.append(item)
    return patches


def write_dataset(items: list, directory: Path, spec: SynthSpec | None = None) -> Path:
    """Write patches (or bags) to `directory`; returns the manifest path."""
    directory = Path(directory)
    image_dir = directory / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for patch in _flatten(items):
        relative = f"images/{patch.instance_id}.png"
        pixels = np.round(np.clip(patch.image, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(pixels).save(directory / relative)
        rows.append({"path": relative, "label": int(patch.label), "slide_id": patch.slide_id})
    manifest = directory / "manifest.csv"
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(manifest, index=False, lineterminator="\n", encoding="utf-8")
    if spec is not None:
        write_json(directory / "spec.json", spec.to_dict())
    logger.info(f"Wrote {len(rows)} images to {directory}")
    return manifest


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        return (np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0).astype(np.float32)


def load_dataset(directory: Path) -> tuple[list, SynthSpec | None]:
    """
    Read a dataset directory. Rows sharing a slide_id become one LabeledBag whose
    label is recomputed as the highest patch grade.

    Returns:
        tuple: (patches or bags, SynthSpec from spec.json or None)
    """
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.is_file():
        raise NotFoundException(f"dataset not found: {manifest} does not exist", ErrorCode.DATASET_NOT_FOUND)
    frame = pd.read_csv(manifest, dtype={"path": str, "label": int, "slide_id": str}, keep_default_na=False)
    missing_columns = set(MANIFEST_COLUMNS) - set(frame.columns)
    if missing_columns:
        raise InputException(f"{manifest} lacks columns {sorted(missing_columns)}")
    if frame.empty:
        raise InputException(f"{manifest} lists no images", ErrorCode.EMPTY_INPUT)

    patches = []
    for row in frame.itertuples(index=False):
        image_path = directory / row.path
        if not image_path.is_file():
            raise NotFoundException(f"image not found: {image_path}", ErrorCode.DATASET_NOT_FOUND)
        patches.append(
            LabeledPatch(
                image=read_image(image_path),
                label=int(row.label),
                instance_id=Path(row.path).stem,
                slide_id=row.slide_id,
            )
        )

    spec = None
    spec_path = directory / "spec.json"
    if spec_path.is_file():
        spec = SynthSpec(**json.loads(spec_path.read_text(encoding="utf-8")))

    if any(p.slide_id for p in patches):
        if not all(p.slide_id for p in patches):
            raise InputException(f"{manifest} mixes rows with and without slide_id")
        grouped: dict[str, list[LabeledPatch]] = {}
        for patch in patches:
            grouped.setdefault(patch.slide_id, []).append(patch)
        return [LabeledBag.from_patches(members, slide_id) for slide_id, members in grouped.items()], spec
    return patches, spec
