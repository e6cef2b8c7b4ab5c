import io
import logging
from pathlib import Path

import torch

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_backbone.models import PromptedViT
from prompt_vit_commons.exceptions import ConfigurationException, ErrorCode, NotFoundException
from prompt_vit_prompts.configs import PromptConfig

from .models import AdaptationModel, build_model
from .modes import TuningMode

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def checkpoint_record(
    model: AdaptationModel,
    model_config: ModelConfig,
    prompt_config: PromptConfig,
    train_config: dict,
    mode: TuningMode,
    step: int,
    seed: int = 0,
    encoder_name: str = "hashed-trigram",
    encoder_dim: int = 768,
) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model_config": model_config.to_dict(),
        "prompt_config": prompt_config.to_dict(),
        "train_config": dict(train_config),
        "mode": mode.label,
        "level": model.level,
        "seed": seed,
        "encoder": {"name": encoder_name, "dim": encoder_dim},
        "step": step,
        "state_dict": {name: tensor.detach().clone() for name, tensor in model.state_dict().items()},
    }


def serialize_checkpoint(record: dict) -> bytes:
    buffer = io.BytesIO()
    torch.save(record, buffer)
    return buffer.getvalue()


def save_checkpoint(path: Path, record: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_checkpoint(record))
    logger.info(f"Saved checkpoint to {path} (step {record['step']})")
    return path


def load_checkpoint(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise NotFoundException(f"checkpoint not found: {path}", ErrorCode.CHECKPOINT_NOT_FOUND)
    record = torch.load(path, map_location="cpu", weights_only=True)
    version = record.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationException(f"unsupported checkpoint format_version {version}, expected {FORMAT_VERSION}")
    return record


def restore_model(record: dict) -> AdaptationModel:
    """Rebuild the model a checkpoint was taken from and load its weights."""
    model = build_model(
        ModelConfig(**record["model_config"]),
        PromptConfig(**record["prompt_config"]),
        TuningMode.from_label(record["mode"]),
        level=record["level"],
        seed=record["seed"],
        encoder_name=record["encoder"]["name"],
        encoder_dim=record["encoder"]["dim"],
    )
    model.load_state_dict(record["state_dict"], strict=True)
    return model


def save_backbone(path: Path, backbone: PromptedViT) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": FORMAT_VERSION,
            "model_config": backbone.config.to_dict(),
            "state_dict": backbone.state_dict(),
        },
        path,
    )
    return path


def load_backbone_weights(backbone: PromptedViT, path: Path) -> None:
    """Strictly load pretrained backbone weights; geometry must match."""
    path = Path(path)
    if not path.is_file():
        raise NotFoundException(f"backbone checkpoint not found: {path}", ErrorCode.CHECKPOINT_NOT_FOUND)
    record = torch.load(path, map_location="cpu", weights_only=True)
    saved = ModelConfig(**record["model_config"])
    current = backbone.config
    geometry = ("image_size", "patch_size", "layers", "dim", "heads", "mlp_ratio")
    mismatched = [key for key in geometry if getattr(saved, key) != getattr(current, key)]
    if mismatched:
        raise ConfigurationException(f"backbone checkpoint {path} does not match model config on {mismatched}")
    backbone.load_state_dict(record["state_dict"], strict=True)
    logger.info(f"Loaded backbone weights from {path}")
