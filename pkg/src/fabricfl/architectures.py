"""Declarative CNN architecture descriptors with exact parameter counting.

The five model families are described as layer lists, not executable
graphs: enough structure to propagate activation shapes and count every
trainable parameter exactly.  Convolutions count (k*k*c_in + 1)*c_out
(weights plus bias), depthwise convolutions (k*k + 1)*c_in, dense layers
(fan_in + 1)*units, and each batch-normalized layer inside a residual
bottleneck adds 2 parameters per channel (scale and shift).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

FAMILIES = ("VGG16", "VGG19", "ResNet50", "ResNet152", "CustomCNN")


@dataclass(frozen=True)
class Conv:
    kernel: int
    channels_out: int
    stride: int = 1


@dataclass(frozen=True)
class DepthwiseConv:
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class AvgPool:
    """Global average pooling down to 1x1 spatial."""


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class Activation:
    kind: str


@dataclass(frozen=True)
class ResidualBottleneck:
    """A stage of `count` 1x1 -> 3x3 -> 1x1 blocks, each conv batch-normalized.

    The first block applies the stride and, when the input channel count
    differs from channels_out, a projection shortcut (1x1 conv + norm).
    """

    channels_mid: int
    channels_out: int
    stride: int
    count: int


Layer = (
    Conv
    | DepthwiseConv
    | MaxPool
    | AvgPool
    | Flatten
    | Dense
    | Dropout
    | Activation
    | ResidualBottleneck
)


@dataclass(frozen=True)
class ArchitectureDescriptor:
    family: str
    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def count_layers(self, *kinds: type) -> int:
        return sum(1 for layer in self.layers if isinstance(layer, kinds))


def _vgg_layers(block_convs: list[int], widths: list[int]) -> list[Layer]:
    layers: list[Layer] = []
    for convs, width in zip(block_convs, widths):
        for _ in range(convs):
            layers.append(Conv(3, width, 1))
            layers.append(Activation("relu"))
        layers.append(MaxPool(2, 2))
    layers += [
        Flatten(),
        Dense(4096),
        Activation("relu"),
        Dropout(0.5),
        Dense(4096),
        Activation("relu"),
        Dropout(0.5),
        Dense(1000),
        Activation("softmax"),
    ]
    return layers


def _resnet_layers(stage_counts: list[int]) -> list[Layer]:
    widths = [(64, 256), (128, 512), (256, 1024), (512, 2048)]
    layers: list[Layer] = [Conv(7, 64, 2), Activation("relu"), MaxPool(3, 2)]
    for i, ((mid, out), count) in enumerate(zip(widths, stage_counts)):
        layers.append(ResidualBottleneck(mid, out, 1 if i == 0 else 2, count))
    layers += [AvgPool(), Flatten(), Dense(1000), Activation("softmax")]
    return layers


def _custom_cnn_layers() -> list[Layer]:
    layers: list[Layer] = [
        Conv(3, 64, 1),
        Activation("relu"),
        Conv(3, 64, 1),
        Activation("relu"),
        MaxPool(2, 2),
        Conv(3, 128, 1),
        Activation("relu"),
        Conv(3, 128, 1),
        Activation("relu"),
        MaxPool(2, 2),
    ]
    # Three depthwise-separable blocks widening 128 -> 256 -> 512 -> 512,
    # each pair being a depthwise conv followed by a 1x1 pointwise conv.
    for width in (256, 512, 512):
        for _ in range(2):
            layers.append(DepthwiseConv(3, 1))
            layers.append(Conv(1, width, 1))
            layers.append(Activation("relu"))
        layers.append(MaxPool(2, 2))
    layers += [
        Flatten(),
        Dense(4096),
        Activation("relu"),
        Dropout(0.5),
        Dense(4096),
        Activation("relu"),
        Dropout(0.5),
        Dense(1),
        Activation("sigmoid"),
    ]
    return layers


def build_descriptor(family: str) -> ArchitectureDescriptor:
    """Return the canonical layer list for one of the five model families."""
    if family == "VGG16":
        layers = _vgg_layers([2, 2, 3, 3, 3], [64, 128, 256, 512, 512])
        return ArchitectureDescriptor(family, (224, 224, 3), tuple(layers))
    if family == "VGG19":
        layers = _vgg_layers([2, 2, 4, 4, 4], [64, 128, 256, 512, 512])
        return ArchitectureDescriptor(family, (224, 224, 3), tuple(layers))
    if family == "ResNet50":
        return ArchitectureDescriptor(family, (224, 224, 3), tuple(_resnet_layers([3, 4, 6, 3])))
    if family == "ResNet152":
        return ArchitectureDescriptor(family, (224, 224, 3), tuple(_resnet_layers([3, 8, 36, 3])))
    if family == "CustomCNN":
        return ArchitectureDescriptor(family, (128, 128, 1), tuple(_custom_cnn_layers()))
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def _pool_output(size: int, kernel: int, stride: int) -> int:
    pad = (kernel - 1) // 2 if kernel % 2 else 0
    return (size + 2 * pad - kernel) // stride + 1


def propagate_shapes(descriptor: ArchitectureDescriptor) -> list[tuple[int, ...]]:
    """Shape after each layer; raises if any layer yields a non-positive shape.

    Convolutions use same padding, so spatial dims shrink only through
    strides and pooling.
    """
    shape: tuple[int, ...] = descriptor.input_shape
    shapes: list[tuple[int, ...]] = []
    for layer in descriptor.layers:
        if isinstance(layer, Conv):
            h, w, _ = _expect_spatial(shape, layer)
            shape = (math.ceil(h / layer.stride), math.ceil(w / layer.stride), layer.channels_out)
        elif isinstance(layer, DepthwiseConv):
            h, w, c = _expect_spatial(shape, layer)
            shape = (math.ceil(h / layer.stride), math.ceil(w / layer.stride), c)
        elif isinstance(layer, MaxPool):
            h, w, c = _expect_spatial(shape, layer)
            shape = (_pool_output(h, layer.kernel, layer.stride),
                     _pool_output(w, layer.kernel, layer.stride), c)
        elif isinstance(layer, AvgPool):
            _, _, c = _expect_spatial(shape, layer)
            shape = (1, 1, c)
        elif isinstance(layer, ResidualBottleneck):
            h, w, _ = _expect_spatial(shape, layer)
            shape = (math.ceil(h / layer.stride), math.ceil(w / layer.stride), layer.channels_out)
        elif isinstance(layer, Flatten):
            shape = (int(math.prod(shape)),)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ValueError(f"dense layer requires a flat input, got shape {shape}")
            shape = (layer.units,)
        elif isinstance(layer, (Dropout, Activation)):
            pass
        else:
            raise ValueError(f"unsupported layer {layer!r}")
        if any(dim <= 0 for dim in shape):
            raise ValueError(f"layer {layer!r} produced non-positive shape {shape}")
        shapes.append(shape)
    return shapes


def _expect_spatial(shape: tuple[int, ...], layer: Layer) -> tuple[int, int, int]:
    if len(shape) != 3:
        raise ValueError(f"layer {layer!r} requires an (H, W, C) input, got {shape}")
    return shape


def _conv_params(kernel: int, c_in: int, c_out: int) -> int:
    return (kernel * kernel * c_in + 1) * c_out


def _bottleneck_params(layer: ResidualBottleneck, c_in: int) -> int:
    total = 0
    for i in range(layer.count):
        block_in = c_in if i == 0 else layer.channels_out
        total += _conv_params(1, block_in, layer.channels_mid) + 2 * layer.channels_mid
        total += _conv_params(3, layer.channels_mid, layer.channels_mid) + 2 * layer.channels_mid
        total += _conv_params(1, layer.channels_mid, layer.channels_out) + 2 * layer.channels_out
        if i == 0 and (layer.stride != 1 or block_in != layer.channels_out):
            total += _conv_params(1, block_in, layer.channels_out) + 2 * layer.channels_out
    return total


def param_count(descriptor: ArchitectureDescriptor) -> int:
    """Exact trainable parameter total for the descriptor."""
    shapes = propagate_shapes(descriptor)
    total = 0
    shape = descriptor.input_shape
    for layer, out_shape in zip(descriptor.layers, shapes):
        if isinstance(layer, Conv):
            total += _conv_params(layer.kernel, shape[2], layer.channels_out)
        elif isinstance(layer, DepthwiseConv):
            total += (layer.kernel * layer.kernel + 1) * shape[2]
        elif isinstance(layer, Dense):
            total += (shape[0] + 1) * layer.units
        elif isinstance(layer, ResidualBottleneck):
            total += _bottleneck_params(layer, shape[2])
        shape = out_shape
    return total
