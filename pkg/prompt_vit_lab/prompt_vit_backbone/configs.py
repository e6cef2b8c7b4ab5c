from dataclasses import asdict, dataclass

from prompt_vit_commons.exceptions import ConfigurationException

# (image_size, patch_size, layers, dim, heads)
PRESETS = {
    "desk": (32, 8, 4, 64, 4),
    "vit-s": (224, 16, 12, 384, 6),
    "vit-b": (224, 16, 12, 768, 12),
}


@dataclass(frozen=True)
class ModelConfig:
    """Backbone geometry. K = (image_size / patch_size)^2 patch tokens of width dim (C)."""

    image_size: int = 32
    patch_size: int = 8
    layers: int = 4
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.patch_size <= 0 or self.image_size <= 0:
            raise ConfigurationException(
                f"image_size and patch_size must be positive, got {self.image_size} and {self.patch_size}"
            )
        if self.image_size % self.patch_size != 0:
            raise ConfigurationException(
                f"image_size not divisible by patch_size: {self.image_size} % {self.patch_size} != 0"
            )
        if self.layers < 1:
            raise ConfigurationException(f"layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigurationException(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.num_classes < 2:
            raise ConfigurationException(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size**2

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size**2

    @property
    def mlp_dim(self) -> int:
        return int(self.dim * self.mlp_ratio)

    @classmethod
    def from_preset(cls, preset: str, num_classes: int, mlp_ratio: float = 4.0) -> "ModelConfig":
        if preset not in PRESETS:
            raise ConfigurationException(f"Unknown model preset '{preset}', expected one of {sorted(PRESETS)}")
        image_size, patch_size, layers, dim, heads = PRESETS[preset]
        return cls(
            image_size=image_size,
            patch_size=patch_size,
            layers=layers,
            dim=dim,
            heads=heads,
            mlp_ratio=mlp_ratio,
            num_classes=num_classes,
        )

    def to_dict(self) -> dict:
        return asdict(self)
