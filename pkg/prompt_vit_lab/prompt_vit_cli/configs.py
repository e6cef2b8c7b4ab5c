"""
Experiment configuration

A YAML file (nested sections or dotted keys such as `train.batch_size: 8`) merged
strictly over the structured defaults below. A run.json written by a previous run is
accepted as well; its `config` record is used.
"""

import dataclasses
import json
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml
from omegaconf import OmegaConf
from omegaconf.errors import ConfigAttributeError, ConfigKeyError, ValidationError

from prompt_vit_backbone.configs import ModelConfig
from prompt_vit_commons.exceptions import (
    ConfigTypeException,
    ConfigurationException,
    ErrorCode,
    NotFoundException,
    UnknownConfigKeyException,
)
from prompt_vit_commons.seeding import derive_seed
from prompt_vit_prompts.configs import DEFAULT_TEMPLATE, PromptConfig
from prompt_vit_synthetic.configs import StainFamily, SynthSpec
from prompt_vit_synthetic.sources import DatasetSource
from prompt_vit_training.modes import TuningMode
from prompt_vit_training.trainer import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class ModelSection:
    preset: str = "custom"  # custom | desk | vit-s | vit-b
    image_size: int = 32
    patch_size: int = 8
    layers: int = 4
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    backbone_checkpoint: str | None = None


@dataclass
class PromptsSection:
    tvp_tokens: int = 10
    ttp_tokens: int = 2
    ivp_tokens: int = 2
    stain: str | None = None  # defaults to the dataset's stain family
    task: str = "tumor grading"
    template: str = DEFAULT_TEMPLATE


@dataclass
class TTPSection:
    encoder: str = "hashed-trigram"  # or huggingface:<model-name>
    encoder_dim: int = 768


@dataclass
class TrainSection:
    learning_rate: float = 0.0002
    batch_size: int = 32
    epochs: int = 10
    optimizer: str = "radam"
    mode: str = "pathotune"  # LP | FT | pathotune
    tvp: bool = True
    ttp: bool = True
    ivp: bool = True
    patience: int = 0


@dataclass
class DataSection:
    path: str | None = None
    name: str = "synthetic"
    level: str = "patch"  # patch | wsi
    num_classes: int = 4
    samples_per_class: int = 25
    stain_family: str = "HE_LIKE"
    instance_gap_strength: float = 0.1
    texture_scale: float = 2.0
    num_bags: int = 20
    bag_size_min: int = 4
    bag_size_max: int = 12


@dataclass
class WSISection:
    max_patches_per_bag: int = 64


@dataclass
class AblationSection:
    seeds: list[int] = field(default_factory=lambda: [0])
    protocol: str = "split"  # split | kfold
    folds: int = 4
    include_full_finetune: bool = False
    extra_datasets: list[str] = field(default_factory=list)


@dataclass
class SweepSection:
    tvp_values: list[int] = field(default_factory=lambda: [1, 5, 10, 20])
    ttp_values: list[int] = field(default_factory=lambda: [2])
    ivp_values: list[int] = field(default_factory=lambda: [0, 2])


@dataclass
class PretrainSection:
    stain_family: str = "IHC_LIKE"
    num_classes: int = 4
    samples_per_class: int = 100
    texture_scale: float = 3.0
    instance_gap_strength: float = 0.05
    epochs: int = 60
    learning_rate: float = 0.001
    batch_size: int = 32


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "default"  # relative to PROMPT_VIT_OUTPUT_ROOT
    model: ModelSection = field(default_factory=ModelSection)
    prompts: PromptsSection = field(default_factory=PromptsSection)
    ttp: TTPSection = field(default_factory=TTPSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    wsi: WSISection = field(default_factory=WSISection)
    ablation: AblationSection = field(default_factory=AblationSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)


def expand_dotted(record: dict) -> dict:
    """{"train.batch_size": 8} -> {"train": {"batch_size": 8}}, merged with nested sections."""
    expanded: dict = {}
    for key, value in record.items():
        if isinstance(value, dict):
            value = expand_dotted(value)
        *parents, leaf = str(key).split(".")
        node = expanded
        for parent in parents:
            node = node.setdefault(parent, {})
            if not isinstance(node, dict):
                raise ConfigTypeException(f"config key '{key}' nests under a non-section value")
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf] = {**node[leaf], **value}
        else:
            node[leaf] = value
    return expanded


def _expected_type(full_key: str) -> str:
    node: typing.Any = ExperimentConfig
    for part in full_key.split("."):
        if not dataclasses.is_dataclass(node):
            break
        hints = typing.get_type_hints(node)
        if part not in hints:
            return "unknown"
        node = hints[part]
    return getattr(node, "__name__", None) or str(node).replace("typing.", "")


def config_from_dict(record: dict) -> ExperimentConfig:
    """Strict merge of `record` over the defaults."""
    schema = OmegaConf.structured(ExperimentConfig)
    try:
        merged = OmegaConf.merge(schema, OmegaConf.create(expand_dotted(record or {})))
        return typing.cast(ExperimentConfig, OmegaConf.to_object(merged))
    except (ConfigKeyError, ConfigAttributeError) as exc:
        raise UnknownConfigKeyException(f"unknown config key '{exc.full_key or exc.key}'") from exc
    except ValidationError as exc:
        raise ConfigTypeException(
            f"config key '{exc.full_key}' expects {_expected_type(str(exc.full_key))}, got {exc.value!r}"
        ) from exc


def read_config_record(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise NotFoundException(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        record = json.loads(text)
        return record.get("config", record)
    try:
        record = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationException(f"cannot parse {path}: {exc}") from exc
    if record is None:
        return {}
    if not isinstance(record, dict):
        raise ConfigTypeException(f"{path} must hold a mapping of config keys, got {type(record).__name__}")
    return record


def check_paths(cfg: ExperimentConfig) -> None:
    """Every path the config references must exist."""
    for label, path in (
        ("data.path", cfg.data.path),
        ("model.backbone_checkpoint", cfg.model.backbone_checkpoint),
        *((f"ablation.extra_datasets[{i}]", p) for i, p in enumerate(cfg.ablation.extra_datasets)),
    ):
        if path and not Path(path).exists():
            code = ErrorCode.CHECKPOINT_NOT_FOUND if label.startswith("model.") else ErrorCode.DATASET_NOT_FOUND
            raise NotFoundException(f"{label} not found: {path}", code)


def parse_config(path: Path, overrides: dict | None = None, validate_paths: bool = True) -> ExperimentConfig:
    """
    Read, merge over defaults, apply `overrides` (dotted keys) and validate.

    Raises:
        UnknownConfigKeyException: a key outside the schema, named in dotted form
        ConfigTypeException: a value of the wrong type, naming the expected type
    """
    record = expand_dotted(read_config_record(path))
    if overrides:
        record = expand_dotted({**_flatten(record), **overrides})
    cfg = config_from_dict(record)
    validate(cfg)
    if validate_paths:
        check_paths(cfg)
    return cfg


def _flatten(record: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def serialize_config(cfg: ExperimentConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(cfg))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return typing.cast(dict, OmegaConf.to_container(OmegaConf.structured(cfg)))


def validate(cfg: ExperimentConfig) -> None:
    """Build every runtime object once so bad values fail before any work starts."""
    model_config(cfg)
    prompt_config(cfg)
    train_config(cfg)
    dataset_source(cfg)
    if cfg.ablation.protocol not in ("split", "kfold"):
        raise ConfigurationException(f"Unknown ablation.protocol '{cfg.ablation.protocol}', expected split or kfold")


def model_config(cfg: ExperimentConfig) -> ModelConfig:
    section = cfg.model
    if section.preset != "custom":
        return ModelConfig.from_preset(section.preset, num_classes=cfg.data.num_classes, mlp_ratio=section.mlp_ratio)
    return ModelConfig(
        image_size=section.image_size,
        patch_size=section.patch_size,
        layers=section.layers,
        dim=section.dim,
        heads=section.heads,
        mlp_ratio=section.mlp_ratio,
        num_classes=cfg.data.num_classes,
    )


def synth_spec(cfg: ExperimentConfig, seed: int | None = None) -> SynthSpec:
    return SynthSpec(
        num_classes=cfg.data.num_classes,
        samples_per_class=cfg.data.samples_per_class,
        image_size=model_config(cfg).image_size,
        stain_family=cfg.data.stain_family,
        instance_gap_strength=cfg.data.instance_gap_strength,
        texture_scale=cfg.data.texture_scale,
        seed=cfg.seed if seed is None else seed,
    )


def prompt_config(cfg: ExperimentConfig) -> PromptConfig:
    section = cfg.prompts
    stain = section.stain or ("IHC" if cfg.data.stain_family == StainFamily.IHC_LIKE.value else "HE")
    return PromptConfig(
        tvp_tokens=section.tvp_tokens,
        ttp_tokens=section.ttp_tokens,
        ivp_tokens=section.ivp_tokens,
        stain=stain,
        task=section.task,
        template=section.template,
    )


def ablation_seeds(cfg: ExperimentConfig) -> list[int]:
    """Cell seeds for the ablation, derived from the root seed and each listed index."""
    return [derive_seed(cfg.seed, "ablation", index) for index in cfg.ablation.seeds]


def tuning_mode(cfg: ExperimentConfig) -> TuningMode:
    return TuningMode.parse(cfg.train.mode, tvp=cfg.train.tvp, ttp=cfg.train.ttp, ivp=cfg.train.ivp)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    section = cfg.train
    try:
        return TrainConfig(
            learning_rate=section.learning_rate,
            batch_size=section.batch_size,
            epochs=section.epochs,
            seed=cfg.seed,
            optimizer=section.optimizer,
            mode=tuning_mode(cfg),
            patience=section.patience,
            max_patches_per_bag=cfg.wsi.max_patches_per_bag,
        )
    except ValueError as exc:
        raise ConfigurationException(f"Unknown train.optimizer '{section.optimizer}', expected radam or adam") from exc


def dataset_source(cfg: ExperimentConfig, path: str | None = None, name: str | None = None) -> DatasetSource:
    data = cfg.data
    return DatasetSource(
        name=name or data.name,
        path=path if path is not None else data.path,
        spec=synth_spec(cfg),
        level=data.level,
        num_bags=data.num_bags,
        bag_size_min=data.bag_size_min,
        bag_size_max=data.bag_size_max,
    )
