"""
Run configuration for panorama_iqa.

Configuration is layered: dataclass defaults, then a flat ``key = value`` file
with dotted section keys (``sampler.fraction = 0.1``), then command-line
``--set`` overrides, then ``--seed``. Every section validates itself and
reports problems as ``ConfigError("section.field: reason")``.
"""

import dataclasses
import math
import typing
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from panorama_iqa.exceptions import ConfigError

# ==================== Choices ====================


class SamplingMode(str, Enum):
    SALIENCY_WEIGHTED = "saliency-weighted"
    UNIFORM_RANDOM = "uniform-random"
    TOPK = "topk"


class ViewportMode(str, Enum):
    TANGENT = "tangent"
    ERP_CROP = "erp-crop"


class EncoderKind(str, Enum):
    LINEAR = "linear"
    CONV = "conv"


class Activation(str, Enum):
    GELU = "gelu"
    RELU = "relu"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class FitScope(str, Enum):
    GROUP = "group"
    OVERALL = "overall"


# ==================== Sections ====================


@dataclass(frozen=True)
class SamplerConfig:
    """Saliency-guided viewport sampling."""

    fraction: float = 0.10
    stride: int = 16
    region_size: int = 16
    mean_shift_bandwidth: int = 8
    mean_shift_iters: int = 3
    mode: SamplingMode = SamplingMode.SALIENCY_WEIGHTED
    viewport_mode: ViewportMode = ViewportMode.TANGENT
    fov: float = math.pi / 4
    resolution: int = 64
    seed: int = 0

    def validate(self) -> "SamplerConfig":
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("sampler.fraction", "must be in (0, 1]")
        if self.stride < 1:
            raise ConfigError("sampler.stride", "must be >= 1")
        if self.region_size < self.stride:
            raise ConfigError("sampler.region_size", "must be >= sampler.stride")
        if self.mean_shift_bandwidth < 1:
            raise ConfigError("sampler.mean_shift_bandwidth", "must be >= 1")
        if self.mean_shift_iters < 0:
            raise ConfigError("sampler.mean_shift_iters", "must be >= 0")
        if not 0.0 < self.fov < math.pi:
            raise ConfigError("sampler.fov", "must be in (0, pi)")
        if self.resolution < 1:
            raise ConfigError("sampler.resolution", "must be >= 1")
        return self


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the viewport quality transformer."""

    token_dim: int = 64
    patch_size: int = 8
    n_layers: int = 2
    n_heads: int = 2
    mlp_dim: int = 128
    n_sources: int = 1
    max_patches: int = 64
    encoder_kind: EncoderKind = EncoderKind.CONV
    activation: Activation = Activation.GELU
    use_geometric_embedding: bool = True
    use_source_embedding: bool = True
    init_std: float = 0.02

    @classmethod
    def full_size(cls, **overrides: Any) -> "ModelConfig":
        """Full-size architecture (ViT-small scale)."""
        values = dict(
            token_dim=384,
            patch_size=32,
            n_layers=14,
            n_heads=6,
            mlp_dim=1152,
            max_patches=49,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def head_dim(self) -> int:
        return self.token_dim // self.n_heads

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(self)

    def architecture_key(self) -> Dict[str, Any]:
        """Fields that must agree between a checkpoint and its consumer."""
        key = self.to_dict()
        key.pop("n_sources")
        key.pop("init_std")
        return key

    def validate(self) -> "ModelConfig":
        for name in ("token_dim", "patch_size", "n_heads", "mlp_dim", "max_patches"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}", "must be >= 1")
        if self.n_layers < 0:
            raise ConfigError("model.n_layers", "must be >= 0")
        if self.n_sources < 0:
            raise ConfigError("model.n_sources", "must be >= 0")
        if self.token_dim % self.n_heads:
            raise ConfigError("model.token_dim", "must be divisible by model.n_heads")
        if self.mlp_dim < self.token_dim:
            raise ConfigError("model.mlp_dim", "must be >= model.token_dim")
        if self.encoder_kind is EncoderKind.CONV and self.patch_size % 4:
            raise ConfigError(
                "model.patch_size", "must be divisible by 4 for the conv encoder"
            )
        if not self.init_std > 0:
            raise ConfigError("model.init_std", "must be > 0")
        return self

    def validate_viewport(self, resolution: int) -> None:
        """Check that viewports of ``resolution`` pixels fit this model."""
        if resolution % self.patch_size:
            raise ConfigError(
                "sampler.resolution",
                f"{resolution} is not divisible by model.patch_size "
                f"{self.patch_size}",
            )
        n_patches = (resolution // self.patch_size) ** 2
        if n_patches > self.max_patches:
            raise ConfigError(
                "model.max_patches",
                f"viewports yield {n_patches} patches, table holds "
                f"{self.max_patches}",
            )


@dataclass(frozen=True)
class TrainConfig:
    """MAE training loop."""

    learning_rate: float = 1e-3
    steps: int = 200
    batch_size: int = 8
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: Optional[float] = None
    group_by_image: bool = False
    resample_each_epoch: bool = False

    def validate(self) -> "TrainConfig":
        # 0 keeps parameters frozen
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError("training.learning_rate", "must be finite and >= 0")
        if self.steps < 0:
            raise ConfigError("training.steps", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size", "must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("training.beta1", "betas must be in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("training.eps", "must be > 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("training.grad_clip", "must be > 0 when set")
        return self


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol."""

    fit_scope: FitScope = FitScope.GROUP
    min_group_fit: int = 5

    def validate(self) -> "EvalConfig":
        if self.min_group_fit < 5:
            raise ConfigError("eval.min_group_fit", "must be >= 5")
        return self


@dataclass(frozen=True)
class RunConfig:
    """All sections plus the single run seed."""

    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        self.sampler.validate()
        self.model.validate()
        self.training.validate()
        self.eval.validate()
        self.model.validate_viewport(self.sampler.resolution)
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """Fan ``seed`` out to every section that draws random numbers."""
        return replace(
            self,
            seed=seed,
            sampler=replace(self.sampler, seed=seed),
            training=replace(self.training, seed=seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(self)


SECTIONS: Dict[str, type] = {
    "sampler": SamplerConfig,
    "model": ModelConfig,
    "training": TrainConfig,
    "eval": EvalConfig,
}

# Seeds come from the top-level key only.
_SEED_FIELDS = {("sampler", "seed"), ("training", "seed")}


# ==================== Parsing ====================


def parse_value(raw: str) -> Any:
    """Parse a config literal: bool, null, int, float, or bare string."""
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    if lowered == "pi":
        return math.pi
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _strip_comment(line: str) -> str:
    """Drop a trailing ``#`` comment; ``#`` inside quotes is kept."""
    quote = None
    for i, char in enumerate(line):
        if quote:
            if char == quote:
                quote = None
        elif char in "\"'":
            quote = char
        elif char == "#":
            return line[:i]
    return line


def parse_config_text(text: str) -> List[Tuple[int, str, Any]]:
    """Split config text into ``(line_number, key, value)`` triples."""
    items = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(line).strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_number}", "expected 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {line_number}", "empty key")
        items.append((line_number, key, parse_value(value)))
    return items


def _coerce(path: str, hint: Any, value: Any) -> Any:
    """Convert a parsed literal to the type declared on the dataclass field."""
    origin = typing.get_origin(hint)
    if origin is Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(path, args[0], value)
    if value is None:
        raise ConfigError(path, "may not be null")
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError:
            choices = ", ".join(member.value for member in hint)
            raise ConfigError(path, f"must be one of: {choices}")
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    return value


def apply_overrides(
    config: RunConfig, overrides: Mapping[str, Any], origin: str = ""
) -> RunConfig:
    """Return ``config`` with dotted-key overrides applied and validated."""
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    seed = config.seed
    for key, value in overrides.items():
        where = f"{origin}{key}"
        if key == "seed":
            seed = _coerce(where, int, value)
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(where, "unknown configuration key")
        if (section, name) in _SEED_FIELDS:
            raise ConfigError(where, "set the top-level 'seed' key instead")
        hints = typing.get_type_hints(SECTIONS[section])
        if name not in hints:
            raise ConfigError(where, "unknown configuration key")
        sections[section][name] = _coerce(where, hints[name], value)

    updated = replace(
        config,
        sampler=replace(config.sampler, **sections["sampler"]),
        model=replace(config.model, **sections["model"]),
        training=replace(config.training, **sections["training"]),
        eval=replace(config.eval, **sections["eval"]),
    )
    return updated.with_seed(seed)


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    seed: Optional[int] = None,
) -> RunConfig:
    """
    Build a validated RunConfig.

    Args:
        path: Optional config file with ``key = value`` lines
        overrides: Dotted-key overrides applied after the file
        seed: Optional seed applied last

    Returns:
        The merged, validated configuration

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    config = RunConfig()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for line_number, key, value in parse_config_text(text):
            config = apply_overrides(
                config, {key: value}, origin=f"{path}:{line_number}: "
            )
    if overrides:
        config = apply_overrides(config, overrides)
    if seed is not None:
        config = config.with_seed(seed)
    return config.validate()


def parse_set_option(option: str) -> Tuple[str, Any]:
    """Parse one ``--set key=value`` command-line override."""
    if "=" not in option:
        raise ConfigError(option, "expected key=value")
    key, value = option.split("=", 1)
    return key.strip(), parse_value(value)


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    return obj


def config_from_dict(cls: type, data: Mapping[str, Any], section: str) -> Any:
    """Rebuild one section dataclass from its plain-dict form."""
    hints = typing.get_type_hints(cls)
    values = {}
    for name, value in data.items():
        if name not in hints:
            raise ConfigError(f"{section}.{name}", "unknown configuration key")
        values[name] = _coerce(f"{section}.{name}", hints[name], value)
    return cls(**values)
