from dataclasses import dataclass
from enum import StrEnum

from prompt_vit_commons.exceptions import ConfigurationException
from prompt_vit_prompts.configs import PromptConfig


class TuningKind(StrEnum):
    FULL_FINETUNE = "FT"
    LINEAR_PROBE = "LP"
    PATHOTUNE = "pathotune"


@dataclass(frozen=True)
class TuningMode:
    """Which parameter groups train. Prompt flags only matter for PATHOTUNE."""

    kind: TuningKind = TuningKind.PATHOTUNE
    tvp_on: bool = True
    ttp_on: bool = True
    ivp_on: bool = True

    def __post_init__(self):
        if self.kind != TuningKind.PATHOTUNE:
            object.__setattr__(self, "tvp_on", False)
            object.__setattr__(self, "ttp_on", False)
            object.__setattr__(self, "ivp_on", False)

    @classmethod
    def full_finetune(cls) -> "TuningMode":
        return cls(TuningKind.FULL_FINETUNE)

    @classmethod
    def linear_probe(cls) -> "TuningMode":
        return cls(TuningKind.LINEAR_PROBE)

    @classmethod
    def pathotune(cls, tvp_on: bool = True, ttp_on: bool = True, ivp_on: bool = True) -> "TuningMode":
        return cls(TuningKind.PATHOTUNE, tvp_on=tvp_on, ttp_on=ttp_on, ivp_on=ivp_on)

    @classmethod
    def parse(cls, mode: str, tvp: bool = True, ttp: bool = True, ivp: bool = True) -> "TuningMode":
        """Parse `LP`, `FT` or `pathotune` (case-insensitive) plus prompt flags."""
        normalized = mode.strip().lower()
        if normalized in ("lp", "linear_probe"):
            return cls.linear_probe()
        if normalized in ("ft", "full_finetune"):
            return cls.full_finetune()
        if normalized == "pathotune":
            return cls.pathotune(tvp, ttp, ivp)
        raise ConfigurationException(f"Unknown tuning mode '{mode}', expected LP, FT or pathotune")

    @classmethod
    def from_label(cls, label: str) -> "TuningMode":
        """Inverse of `label`."""
        if label in ("LP", "FT"):
            return cls.parse(label)
        if label == "pathotune(none)":
            return cls.pathotune(False, False, False)
        if label == "all":
            return cls.pathotune()
        parts = set(label.split("+"))
        unknown = parts - {"TTP", "TVP", "IVP"}
        if unknown:
            raise ConfigurationException(f"Unknown tuning mode label '{label}'")
        return cls.pathotune("TVP" in parts, "TTP" in parts, "IVP" in parts)

    @property
    def label(self) -> str:
        if self.kind != TuningKind.PATHOTUNE:
            return self.kind.value
        enabled = [name for name, on in (("TTP", self.ttp_on), ("TVP", self.tvp_on), ("IVP", self.ivp_on)) if on]
        if len(enabled) == 3:
            return "all"
        return "+".join(enabled) if enabled else "pathotune(none)"

    @property
    def uses_prompts(self) -> bool:
        return self.tvp_on or self.ttp_on or self.ivp_on

    def effective_prompts(self, config: PromptConfig) -> PromptConfig:
        """Zero the token counts of every disabled prompt family."""
        return config.with_counts(
            config.tvp_tokens if self.tvp_on else 0,
            config.ttp_tokens if self.ttp_on else 0,
            config.ivp_tokens if self.ivp_on else 0,
        )


# LP, the single-prompt ablations, all prompts
DEFAULT_ABLATION_GRID = (
    TuningMode.linear_probe(),
    TuningMode.pathotune(tvp_on=False, ttp_on=True, ivp_on=False),
    TuningMode.pathotune(tvp_on=True, ttp_on=False, ivp_on=False),
    TuningMode.pathotune(tvp_on=False, ttp_on=False, ivp_on=True),
    TuningMode.pathotune(),
)
