from dataclasses import asdict, dataclass, replace

from prompt_vit_commons.exceptions import ConfigurationException, TemplateException

DEFAULT_TEMPLATE = "A patch image showing {stain} pathology tissues for {task}"


def check_template(template: str) -> None:
    for placeholder in ("{stain}", "{task}"):
        found = template.count(placeholder)
        if found != 1:
            raise TemplateException(f"template must contain {placeholder} exactly once, found {found}: {template!r}")


@dataclass(frozen=True)
class PromptConfig:
    """Prompt token counts N (TVP per layer), T (TTP), M (IVP) and the textual prompt inputs."""

    tvp_tokens: int = 10
    ttp_tokens: int = 2
    ivp_tokens: int = 2
    stain: str = "HE"
    task: str = "tumor grading"
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        for name in ("tvp_tokens", "ttp_tokens", "ivp_tokens"):
            if getattr(self, name) < 0:
                raise ConfigurationException(f"{name} must be >= 0, got {getattr(self, name)}")
        check_template(self.template)

    def with_counts(self, tvp_tokens: int, ttp_tokens: int, ivp_tokens: int) -> "PromptConfig":
        return replace(self, tvp_tokens=tvp_tokens, ttp_tokens=ttp_tokens, ivp_tokens=ivp_tokens)

    def to_dict(self) -> dict:
        return asdict(self)


def render_template(config: PromptConfig) -> str:
    """Fill {stain} and {task} into the template."""
    check_template(config.template)
    return config.template.replace("{stain}", config.stain).replace("{task}", config.task)
