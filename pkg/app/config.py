from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from app.exceptions import BadConfig


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"

    # Parallel seeded runs inside `experiment`
    WORKERS: int = 1

    class Config:
        env_file = ".env"


settings = Settings()


class Mode(str, Enum):
    ABSOLUTE = "absolute"
    RELATIVE_VANILLA = "relative_vanilla"
    RELATIVE_ROBUST = "relative_robust"


class Placement(str, Enum):
    PRE = "pre"
    POST = "post"
    COMBINED = "combined"
    NONE = "none"


class DomainKind(str, Enum):
    SCALED_PERMUTATION = "scaled_permutation"
    ORTHOGONAL_MIX = "orthogonal_mix"
    INDEPENDENT_NOISE = "independent_noise"


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainConfig(_Section):
    seed: int = Field(0, description="single source of randomness")
    mode: Mode = Field(Mode.RELATIVE_ROBUST, description="latent transform used while training")
    activation: str = Field("relu", description="relu | gelu | sigmoid | identity")
    hidden_sizes: List[int] = Field([32, 16], description="encoder widths, the last one is the latent dim")
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(16, ge=2, description="sub-batch size n of the K+1 loader")
    learning_rate_encoder: float = Field(0.05, gt=0)
    learning_rate_head: float = Field(0.1, gt=0)
    layerwise_decay: float = Field(0.65, gt=0, le=1)
    anchor_refresh_steps: int = Field(100, ge=1)
    anchors: int = Field(0, ge=0, description="anchor count k, 0 means the latent dim")
    momentum: float = Field(0.9, ge=0, lt=1, description="running-stats momentum")
    norm_epsilon: float = Field(1e-5, ge=0, description="variance floor of training-time robust normalization")
    jitter: float = Field(1e-9, ge=0, description="perturbation of duplicated class samples")

    @field_validator("hidden_sizes", mode="before")
    @classmethod
    def _parse_sizes(cls, value):
        return _split_list(value)

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value: str) -> str:
        if value not in {"relu", "gelu", "sigmoid", "identity"}:
            raise ValueError(f"unknown activation {value!r}")
        return value


class TopoConfig(_Section):
    placement: Placement = Field(Placement.COMBINED, description="pre | post | combined | none")
    lambda_pre: float = Field(2e-3, ge=0)
    lambda_post: float = Field(1.8e-2, ge=0)
    beta: float = Field(3.0, gt=0)
    scheduler_period_steps: int = Field(0, ge=0, description="0 means one epoch")
    lifespan: str = Field("length", description="length | monotone")
    lifespan_table: List[float] = Field([], description="x0,y0,x1,y1,... breakpoints of F")

    @field_validator("lifespan_table", mode="before")
    @classmethod
    def _parse_table(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def _check_lifespan(self) -> "TopoConfig":
        if self.lifespan not in {"length", "monotone"}:
            raise ValueError(f"unknown lifespan {self.lifespan!r}")
        if self.lifespan == "monotone" and (len(self.lifespan_table) < 4 or len(self.lifespan_table) % 2):
            raise ValueError("monotone lifespan needs at least two (x, y) breakpoints")
        return self

    @property
    def pre_weight(self) -> float:
        return self.lambda_pre if self.placement in (Placement.PRE, Placement.COMBINED) else 0.0

    @property
    def post_weight(self) -> float:
        return self.lambda_post if self.placement in (Placement.POST, Placement.COMBINED) else 0.0


class DataConfig(_Section):
    kind: DomainKind = Field(DomainKind.SCALED_PERMUTATION)
    classes: int = Field(2, ge=2)
    samples: int = Field(2000, ge=4)
    dim: int = Field(8, ge=2)
    separation: float = Field(4.0, gt=0, description="distance between class means")
    scale_min: float = Field(0.5, gt=0)
    scale_max: float = Field(2.0, gt=0)
    alpha: float = Field(1.5, gt=0, description="isotropic factor of orthogonal_mix")
    noise_std: float = Field(0.5, ge=0, description="noise of independent_noise")
    test_fraction: float = Field(0.25, gt=0, lt=1)


class StitchConfig(_Section):
    modes: List[Mode] = Field(
        [Mode.ABSOLUTE, Mode.RELATIVE_VANILLA, Mode.RELATIVE_ROBUST],
        description="modes of the stitching grid",
    )
    runs: int = Field(5, ge=1)
    f1: str = Field("macro", description="macro | micro")
    eval_stats: str = Field("running", description="running | full")
    analysis_points: int = Field(64, ge=2, description="per-class points for death-time histograms")
    histogram_bins: int = Field(20, ge=1)

    @field_validator("modes", mode="before")
    @classmethod
    def _parse_modes(cls, value):
        return _split_list(value)

    @field_validator("f1")
    @classmethod
    def _known_f1(cls, value: str) -> str:
        if value not in {"macro", "micro"}:
            raise ValueError(f"unknown f1 averaging {value!r}")
        return value

    @field_validator("eval_stats")
    @classmethod
    def _known_stats(cls, value: str) -> str:
        if value not in {"running", "full"}:
            raise ValueError(f"unknown eval_stats {value!r}")
        return value


class ExperimentConfig(_Section):
    train: TrainConfig = Field(default_factory=TrainConfig)
    topo: TopoConfig = Field(default_factory=TopoConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    stitch: StitchConfig = Field(default_factory=StitchConfig)


SECTIONS = ("train", "topo", "data", "stitch")


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise BadConfig(f"{source}:{number}: empty key")
        values[key] = value
    return values


def _nest(flat: Dict[str, str]) -> Dict[str, Dict[str, str]]:
    nested: Dict[str, Dict[str, str]] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise BadConfig(f"unknown config key {key!r}")
        nested.setdefault(section, {})[name] = value
    return nested


def load_config(path: Optional[Path] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    flat: Dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise BadConfig(f"cannot read config {path}: {e}") from e
        flat.update(parse_assignments(text.splitlines(), source=str(path)))

    flat.update(parse_assignments(overrides, source="--set"))

    try:
        return ExperimentConfig.model_validate(_nest(flat))
    except ValidationError as e:
        raise BadConfig(f"invalid configuration: {e}") from e


def _render(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, list):
        return ",".join(_render(v) for v in value)
    return str(value)


def flatten_config(config: ExperimentConfig) -> List[Tuple[str, str]]:
    rows = []
    for section in SECTIONS:
        model = getattr(config, section)
        for name in type(model).model_fields:
            rows.append((f"{section}.{name}", _render(getattr(model, name))))
    return rows


def render_config(config: ExperimentConfig) -> str:
    return "".join(f"{key} = {value}\n" for key, value in flatten_config(config))


def describe_keys() -> str:
    lines = []
    defaults = ExperimentConfig()
    for section in SECTIONS:
        model = getattr(defaults, section)
        for name, field in type(model).model_fields.items():
            hint = f"  ({field.description})" if field.description else ""
            lines.append(f"{section}.{name} = {_render(getattr(model, name))}{hint}")
    return "\n".join(lines)
