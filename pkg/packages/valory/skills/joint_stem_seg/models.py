# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""This module contains the configuration models of the joint stem segmentation skill."""

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import (
    Any,
    Dict,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Type,
    TypeVar,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

import jsonschema
import yaml
from typing_validation import validate

PLANT_CLASS_NAMES: Tuple[str, ...] = ("soil", "crop", "dicot", "grass")
STEM_CLASS_NAMES: Tuple[str, ...] = ("soil", "crop", "dicot")
PLANT_HEAD = "plant"
STEM_HEAD = "stem"
DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.yaml"
CHANNEL_LAYOUTS = {"RGB": 3, "RGBN": 4}

ConfigT = TypeVar("ConfigT")


def from_mapping(cls: Type[ConfigT], data: Mapping[str, Any]) -> ConfigT:
    """Build a (possibly nested) config dataclass from plain YAML/JSON data.

    Lists become tuples and nested mappings become the annotated dataclass,
    so that a config survives a JSON round trip and still compares equal.

    :param cls: the dataclass to build.
    :param data: the plain mapping.
    :return: the built dataclass instance.
    """
    hints = get_type_hints(cls)
    kwargs: Dict[str, Any] = {}
    for item in fields(cls):  # type: ignore[arg-type]
        if item.name not in data:
            continue
        kwargs[item.name] = _coerce(hints[item.name], data[item.name])
    unknown = set(data) - set(kwargs)
    if unknown:
        raise ValueError(f"Unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**kwargs)


def _coerce(type_: Any, value: Any) -> Any:
    """Coerce plain data into the annotated type."""
    if value is None:
        return None
    origin = get_origin(type_)
    if origin is Union:
        non_null = [arg for arg in get_args(type_) if arg is not type(None)]
        return _coerce(non_null[0], value) if len(non_null) == 1 else value
    if is_dataclass(type_) and isinstance(value, Mapping):
        return from_mapping(type_, value)  # type: ignore[arg-type]
    if origin is tuple and isinstance(value, (list, tuple)):
        args = get_args(type_)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], item) for item in value)
        return tuple(_coerce(arg, item) for arg, item in zip(args, value))
    return value


@dataclass(frozen=True)
class DenseBlockConfig:
    """The configuration of one dense block: N layers of growth rate G."""

    num_layers: int = 4
    growth_rate: int = 4
    bottleneck_width: Optional[int] = None

    def __post_init__(self) -> None:
        """Validate the block and resolve the default bottleneck width of 4·G."""
        if self.num_layers < 1:
            raise ValueError("num_layers must be positive")
        if self.growth_rate < 1:
            raise ValueError("growth_rate must be positive")
        if self.bottleneck_width is None:
            object.__setattr__(self, "bottleneck_width", 4 * self.growth_rate)
        if self.width < 1:
            raise ValueError("bottleneck_width must be positive")

    @property
    def width(self) -> int:
        """The resolved bottleneck width."""
        return int(self.bottleneck_width)  # type: ignore[arg-type]

    @property
    def output_channels(self) -> int:
        """The number of feature maps a block emits, N·G."""
        return self.num_layers * self.growth_rate


@dataclass(frozen=True)
class NetworkConfig:
    """All architecture hyperparameters of the FC-DenseNet.

    `level_blocks`, when given, holds one block per encoder level followed by
    the bottom block (`levels + 1` entries); the decoders mirror the encoder
    levels. Otherwise every level uses `dense_block`.
    """

    input_channels: int = 4
    levels: int = 4
    dense_block: DenseBlockConfig = field(default_factory=DenseBlockConfig)
    level_blocks: Tuple[DenseBlockConfig, ...] = ()
    dropout_p: float = 1.0 / 3.0
    leaky_slope: float = 0.01
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    bn_before_activation: bool = False
    heads: Tuple[str, ...] = (PLANT_HEAD, STEM_HEAD)
    plant_classes: int = len(PLANT_CLASS_NAMES)
    stem_classes: int = len(STEM_CLASS_NAMES)

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.input_channels not in CHANNEL_LAYOUTS.values():
            raise ValueError("input_channels must be 3 (RGB) or 4 (RGB+NIR)")
        if self.levels < 1:
            raise ValueError("levels must be positive")
        if self.level_blocks and len(self.level_blocks) != self.levels + 1:
            raise ValueError(
                f"level_blocks needs {self.levels + 1} entries "
                f"(one per level plus the bottom block), got {len(self.level_blocks)}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.bn_epsilon <= 0:
            raise ValueError("bn_epsilon must be positive")
        if not self.heads or set(self.heads) - {PLANT_HEAD, STEM_HEAD}:
            raise ValueError(f"heads must be a non-empty subset of {PLANT_HEAD, STEM_HEAD}")
        if len(set(self.heads)) != len(self.heads):
            raise ValueError("heads must not repeat")
        if self.plant_classes != len(PLANT_CLASS_NAMES):
            raise ValueError(f"plant_classes is fixed at {len(PLANT_CLASS_NAMES)}")
        if self.stem_classes != len(STEM_CLASS_NAMES):
            raise ValueError(f"stem_classes is fixed at {len(STEM_CLASS_NAMES)}")

    def block(self, level: int) -> DenseBlockConfig:
        """Return the dense block of an encoder level; `level == levels` is the bottom block."""
        if self.level_blocks:
            return self.level_blocks[level]
        return self.dense_block

    @property
    def required_multiple(self) -> int:
        """The factor that input heights and widths must be divisible by."""
        return 2**self.levels

    def with_heads(self, *heads: str) -> "NetworkConfig":
        """Return a copy of this configuration with other heads."""
        data = self.to_dict()
        data["heads"] = list(heads)
        return from_mapping(NetworkConfig, data)

    def to_dict(self) -> Dict[str, Any]:
        """Return the configuration as plain data."""
        return _plain(asdict(self))


@dataclass(frozen=True)
class PreprocessConfig:
    """Per-channel input normalization: Gaussian smoothing, standardization, contrast stretch."""

    kernel_size: int = 5
    gaussian_mean: float = 0.0
    gaussian_variance: float = 1.0
    output_range: Tuple[float, float] = (-0.5, 0.5)
    zero_variance_epsilon: float = 1e-8
    divide_by_std: bool = False

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd number")
        if self.gaussian_variance <= 0:
            raise ValueError("gaussian_variance must be positive")
        if self.output_range[0] >= self.output_range[1]:
            raise ValueError("output_range must be increasing")
        if self.zero_variance_epsilon <= 0:
            raise ValueError("zero_variance_epsilon must be positive")


@dataclass(frozen=True)
class LossConfig:
    """The multi-task objective: L = (1 - alpha) * L_stem + alpha * L_plant."""

    alpha: float = 0.5
    plant_class_weights: Tuple[float, ...] = (1.0, 10.0, 10.0, 10.0)
    stem_foreground_classes: Tuple[int, ...] = (1, 2)
    probability_floor: float = 1e-7

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if len(self.plant_class_weights) != len(PLANT_CLASS_NAMES):
            raise ValueError(
                f"plant_class_weights needs {len(PLANT_CLASS_NAMES)} entries"
            )
        if any(weight <= 0 for weight in self.plant_class_weights):
            raise ValueError("plant_class_weights must be positive")
        if not self.stem_foreground_classes or any(
            not 0 < cls < len(STEM_CLASS_NAMES) for cls in self.stem_foreground_classes
        ):
            raise ValueError("stem_foreground_classes must be stem classes other than soil")
        if not 0.0 < self.probability_floor < 1.0:
            raise ValueError("probability_floor must lie in (0, 1)")


@dataclass(frozen=True)
class MatchConfig:
    """Detection matching: a detection is a TP below `theta_mm` from an unassigned stem."""

    theta_mm: float = 10.0
    mm_per_pixel: float = 1.0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.theta_mm <= 0:
            raise ValueError("theta_mm must be positive")
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions of a dataset split."""

    train: float = 0.75
    val: float = 0.05
    test: float = 0.20
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the fractions."""
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be non-negative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class SynthConfig:
    """The synthetic field-image generator's parameters (sizes in pixels)."""

    num_images: int = 200
    width: int = 96
    height: int = 96
    channels: str = "RGBN"
    seed: int = 7
    mm_per_pixel: float = 1.0
    crops_per_image: Tuple[int, int] = (1, 2)
    dicots_per_image: Tuple[int, int] = (1, 3)
    grasses_per_image: Tuple[int, int] = (0, 2)
    crop_radius: Tuple[float, float] = (9.0, 14.0)
    dicot_radius: Tuple[float, float] = (4.0, 7.0)
    grass_length: Tuple[float, float] = (14.0, 26.0)
    grass_width: float = 1.2
    overlap_rate: float = 0.2
    soil_noise: float = 12.0
    margin: int = 6

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.num_images < 0:
            raise ValueError("num_images must be non-negative")
        if self.width < 8 or self.height < 8:
            raise ValueError("images must be at least 8x8 pixels")
        if self.channels not in CHANNEL_LAYOUTS:
            raise ValueError(f"channels must be one of {sorted(CHANNEL_LAYOUTS)}")
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")
        for name in ("crops_per_image", "dicots_per_image", "grasses_per_image"):
            low, high = getattr(self, name)
            if low < 0 or high < low:
                raise ValueError(f"{name} must be a non-negative increasing range")
        for name in ("crop_radius", "dicot_radius", "grass_length"):
            low, high = getattr(self, name)
            if low <= 0 or high < low:
                raise ValueError(f"{name} must be a positive increasing range")
        if not 0.0 <= self.overlap_rate <= 1.0:
            raise ValueError("overlap_rate must lie in [0, 1]")
        if 2 * self.margin >= min(self.width, self.height):
            raise ValueError("margin leaves no room for plants")


@dataclass(frozen=True)
class TrainConfig:
    """The optimization protocol: ADAM, step schedule, mini-batches, checkpoint cadence."""

    batch_size: int = 4
    initial_lr: float = 0.01
    lr_decay_epochs: Tuple[int, ...] = (50, 250, 1000)
    lr_decay_factor: float = 10.0
    max_epochs: int = 2000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    val_every: int = 10
    stem_radius_px: int = 5
    min_area: int = 3
    dtype: str = "float32"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if any(
            later <= earlier
            for earlier, later in zip(self.lr_decay_epochs, self.lr_decay_epochs[1:])
        ):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if self.lr_decay_factor <= 0:
            raise ValueError("lr_decay_factor must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("ADAM betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")
        if self.val_every < 1:
            raise ValueError("val_every must be positive")
        if self.stem_radius_px < 1:
            raise ValueError("stem_radius_px must be at least 1")
        if self.min_area < 1:
            raise ValueError("min_area must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def alpha(self) -> float:
        """The multi-task weight of the plant loss."""
        return self.loss.alpha


@dataclass(frozen=True)
class PathsConfig:
    """Filesystem locations of a run."""

    dataset_dir: str = "data/synth"
    output_dir: str = "runs/default"


def _plain(value: Any) -> Any:
    """Convert tuples to lists recursively, so the data is YAML/JSON friendly."""
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def _section_schema(cls: Type[Any]) -> Dict[str, Any]:
    """A JSON schema that accepts exactly the fields of a config dataclass."""
    return {
        "type": "object",
        "properties": {item.name: {} for item in fields(cls)},
        "additionalProperties": False,
    }


RUN_CONFIG_SECTIONS: Dict[str, Type[Any]] = {
    "network": NetworkConfig,
    "preprocess": PreprocessConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "match": MatchConfig,
    "split": SplitSpec,
    "synth": SynthConfig,
    "paths": PathsConfig,
}

RUN_CONFIG_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "properties": {
        name: _section_schema(cls) for name, cls in RUN_CONFIG_SECTIONS.items()
    },
    "required": sorted(RUN_CONFIG_SECTIONS),
    "additionalProperties": False,
}


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Merge `update` into a copy of `base`, recursing into nested mappings."""
    merged = copy.deepcopy(dict(base))
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_overrides(data: Mapping[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply dotted `section.key=value` overrides; values are parsed as YAML scalars."""
    result = copy.deepcopy(dict(data))
    for override in overrides:
        key, sep, raw = override.partition("=")
        if not sep or not key:
            raise ValueError(f"Override {override!r} is not of the form section.key=value")
        *parents, leaf = key.strip().split(".")
        node = result
        for parent in parents:
            node = node.setdefault(parent, {})
            if not isinstance(node, dict):
                raise ValueError(f"Override {override!r} descends into a non-mapping")
        node[leaf] = yaml.safe_load(raw)
    return result


class RunConfig:
    """The parameters of a run: every section of the YAML run configuration.

    Like the skill `Params`, each section is pulled out of the raw keyword
    arguments with `_ensure`, type-checked, and turned into its frozen
    config dataclass; any failure surfaces as a single `ValueError`.
    """

    def __init__(self, **kwargs: Any) -> None:
        """Set up the run configuration from raw section mappings."""
        try:
            jsonschema.validate(kwargs, RUN_CONFIG_SCHEMA)
            self.network: NetworkConfig = self._section("network", kwargs, NetworkConfig)
            self.preprocess: PreprocessConfig = self._section(
                "preprocess", kwargs, PreprocessConfig
            )
            loss: LossConfig = self._section("loss", kwargs, LossConfig)
            train_data = dict(self._ensure("train", kwargs, Dict[str, Any]))
            train_data.setdefault("loss", asdict(loss))
            self.train: TrainConfig = from_mapping(TrainConfig, train_data)
            self.match: MatchConfig = self._section("match", kwargs, MatchConfig)
            self.split: SplitSpec = self._section("split", kwargs, SplitSpec)
            self.synth: SynthConfig = self._section("synth", kwargs, SynthConfig)
            self.paths: PathsConfig = self._section("paths", kwargs, PathsConfig)
            self.validate_configuration()
        except (jsonschema.ValidationError, TypeError, ValueError) as e:
            message = e.message if isinstance(e, jsonschema.ValidationError) else e
            raise ValueError(f"Configuration validation failed: {message}") from e

    @staticmethod
    def _ensure(key: str, kwargs: Dict[str, Any], type_: Any) -> Any:
        """Pop a key from the raw arguments and check it against the expected type."""
        value = kwargs.pop(key, None)
        try:
            validate(value, type_)
        except TypeError as e:
            raise TypeError(f"{key!r} must be of type {type_}, got {value!r}") from e
        return value

    def _section(self, key: str, kwargs: Dict[str, Any], cls: Type[ConfigT]) -> ConfigT:
        """Build one config section."""
        return from_mapping(cls, self._ensure(key, kwargs, Dict[str, Any]))

    @property
    def loss(self) -> LossConfig:
        """The loss configuration (carried by the train section)."""
        return self.train.loss

    def validate_configuration(self) -> None:
        """Validate cross-section consistency."""
        channels = CHANNEL_LAYOUTS[self.synth.channels]
        if channels != self.network.input_channels:
            raise ValueError(
                f"synth.channels={self.synth.channels} yields {channels} channels "
                f"but network.input_channels={self.network.input_channels}"
            )
        if self.synth.mm_per_pixel != self.match.mm_per_pixel:
            raise ValueError(
                "synth.mm_per_pixel and match.mm_per_pixel disagree "
                f"({self.synth.mm_per_pixel} vs {self.match.mm_per_pixel})"
            )
        multiple = self.network.required_multiple
        if self.synth.width % multiple or self.synth.height % multiple:
            raise ValueError(
                f"synth.width={self.synth.width} and synth.height={self.synth.height} "
                f"must be multiples of {multiple} for network.levels={self.network.levels}"
            )

    def to_dict(self) -> Dict[str, Any]:
        """Return the effective configuration as plain data."""
        train = _plain(asdict(self.train))
        loss = train.pop("loss")
        return {
            "network": self.network.to_dict(),
            "preprocess": _plain(asdict(self.preprocess)),
            "loss": loss,
            "train": train,
            "match": _plain(asdict(self.match)),
            "split": _plain(asdict(self.split)),
            "synth": _plain(asdict(self.synth)),
            "paths": _plain(asdict(self.paths)),
        }

    def to_yaml(self) -> str:
        """Return the effective configuration as YAML."""
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Sequence[str] = (),
    ) -> "RunConfig":
        """Load the packaged defaults, merge a user file over them, then apply overrides."""
        data = yaml.safe_load(DEFAULT_CONFIG_PATH.read_text(encoding="utf-8")) or {}
        if path is not None:
            user = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
            if not isinstance(user, Mapping):
                raise ValueError(f"Configuration validation failed: {path} is not a mapping")
            data = deep_merge(data, user)
        return cls(**apply_overrides(data, overrides))
