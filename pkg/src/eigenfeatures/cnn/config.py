"""Architecture and training configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional, Union

from ..errors import ConfigError, InvalidGeometryError


@dataclass(frozen=True)
class Conv:
    kernel: int
    filters: int
    pad: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"conv kernel must be odd and >= 1, got {self.kernel}")
        if self.filters < 1 or self.stride < 1 or self.pad < 0:
            raise ConfigError(f"invalid conv layer {self}")


@dataclass(frozen=True)
class BatchNorm:
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if self.epsilon <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError(f"invalid batch-norm layer {self}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise ConfigError(f"invalid max-pool layer {self}")


@dataclass(frozen=True)
class FullyConnected:
    outputs: int

    def __post_init__(self):
        if self.outputs < 1:
            raise ConfigError("fully connected layer needs at least one output")


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Conv, BatchNorm, ReLU, MaxPool, FullyConnected, Dropout, Softmax]

_KINDS = {
    "conv": Conv,
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "maxpool": MaxPool,
    "fc": FullyConnected,
    "dropout": Dropout,
    "softmax": Softmax,
}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def layer_to_dict(layer: LayerSpec) -> dict:
    return {"type": _NAMES[type(layer)], **asdict(layer)}


def layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    try:
        cls = _KINDS[d.pop("type")]
    except KeyError as exc:
        raise ConfigError(f"unknown or missing layer type in {d!r}") from exc
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad fields for {cls.__name__}: {exc}") from None


def output_size(w1: int, kernel: int, pad: int, stride: int) -> int:
    """Spatial size after a convolution: ``(W1 - F + 2P) / S + 1``."""
    num = w1 - kernel + 2 * pad
    if num < 0:
        raise InvalidGeometryError(f"kernel {kernel} does not fit input {w1} with padding {pad}")
    if num % stride:
        raise InvalidGeometryError(f"(W1 - F + 2P) = {num} is not divisible by stride {stride}")
    return num // stride + 1


def pool_output_size(w1: int, size: int, stride: int) -> int:
    """Pooled size; a trailing partial window is dropped (floor)."""
    if w1 < size:
        raise InvalidGeometryError(f"pool window {size} exceeds input {w1}")
    return (w1 - size) // stride + 1


@dataclass(frozen=True)
class NetworkConfig:
    """Input geometry ``(width, height, channels)``, ordered layers, class count."""

    input_shape: tuple[int, int, int]
    layers: tuple
    classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self) -> None:
        layers = self.layers
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input shape must be (width, height, channels), got {self.input_shape}")
        if self.classes < 1:
            raise ConfigError("need at least one class")
        if len(layers) < 2 or not isinstance(layers[-1], Softmax):
            raise ConfigError("the last layer must be Softmax")
        if not (isinstance(layers[-2], FullyConnected) and layers[-2].outputs == self.classes):
            raise ConfigError(f"the layer before Softmax must be FullyConnected({self.classes})")
        for i, layer in enumerate(layers):
            if isinstance(layer, Conv):
                if not (i + 2 < len(layers) and isinstance(layers[i + 1], BatchNorm)
                        and isinstance(layers[i + 2], ReLU)):
                    raise ConfigError(f"conv layer {i} must be followed by BatchNorm then ReLU")
            if isinstance(layer, Softmax) and i != len(layers) - 1:
                raise ConfigError("Softmax may only appear last")
        self.shapes()

    def shapes(self) -> list[tuple]:
        """Output shape of every layer: ``(h, w, c)`` for maps, ``(n,)`` for vectors."""
        w, h, c = self.input_shape
        shape: tuple = (h, w, c)
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv, MaxPool)) and len(shape) != 3:
                raise ConfigError(f"layer {i} ({type(layer).__name__}) needs a spatial input")
            if isinstance(layer, Conv):
                shape = (output_size(shape[0], layer.kernel, layer.pad, layer.stride),
                         output_size(shape[1], layer.kernel, layer.pad, layer.stride),
                         layer.filters)
            elif isinstance(layer, MaxPool):
                shape = (pool_output_size(shape[0], layer.size, layer.stride),
                         pool_output_size(shape[1], layer.size, layer.stride),
                         shape[2])
            elif isinstance(layer, FullyConnected):
                shape = (layer.outputs,)
            out.append(shape)
        return out

    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, Conv)]

    def relu_index(self, k: int) -> int:
        """Layer index of the ``k``-th ReLU (1-based, so ``relu_index(2)`` is ReLU 2)."""
        relus = [i for i, l in enumerate(self.layers) if isinstance(l, ReLU)]
        if not 1 <= k <= len(relus):
            raise ConfigError(f"network has {len(relus)} ReLU layers, asked for number {k}")
        return relus[k - 1]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer_to_dict(l) for l in self.layers],
            "classes": self.classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        try:
            return cls(tuple(d["input_shape"]), tuple(layer_from_dict(l) for l in d["layers"]),
                       int(d["classes"]))
        except KeyError as exc:
            raise ConfigError(f"network config missing field {exc}") from None

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def conv_block(kernel: int, filters: int, pad: int = 1) -> list:
    return [Conv(kernel, filters, pad), BatchNorm(), ReLU(), MaxPool(2, 2)]


def build_config(size: int, blocks, classes: int = 4, dropout: float = 0.5,
                 channels: int = 1) -> NetworkConfig:
    """Stack ``(kernel, filters)`` conv blocks, then dropout, FC and softmax."""
    layers = []
    for kernel, filters in blocks:
        layers += conv_block(kernel, filters)
    layers += [Dropout(dropout), FullyConnected(classes), Softmax()]
    return NetworkConfig((size, size, channels), tuple(layers), classes)


FULL_BLOCKS = ((3, 128), (5, 128), (7, 64), (9, 64), (11, 64))
DESK_BLOCKS = ((3, 32), (5, 32), (7, 16))


def full_config() -> NetworkConfig:
    """Full-size architecture: five conv blocks on 266x266 inputs."""
    return build_config(266, FULL_BLOCKS)


def desk_config(size: int = 64) -> NetworkConfig:
    """Reduced default: three conv blocks (32/32/16 channels) on 64x64 inputs."""
    return build_config(size, DESK_BLOCKS)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-2
    epochs: int = 10
    val_fraction: float = 0.3
    val_frequency: int = 5
    l2_lambda: float = 1e-4
    dropout_rate: Optional[float] = None
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.val_frequency < 1:
            raise ConfigError("epochs and val_frequency must be >= 1")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be non-negative")
        if self.dropout_rate is not None and not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> TrainConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})
