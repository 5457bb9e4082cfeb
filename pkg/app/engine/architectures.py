"""
Named model architectures and the plain-text custom model format.

A custom model file looks like:

    input 1 28 28
    loss softmax_ce
    conv2d 20 5 5 1, relu, maxpool 2 2
    conv2d 50 5 5, relu, maxpool 2 2, flatten
    affine 500, relu
    affine 10

Blank lines and `#` comments are ignored; every other line after the
header is one layer of comma-separated sublayers.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Tuple

from engine.exceptions import ConfigurationError
from engine.layers import (
    Affine,
    AvgPool,
    Conv2D,
    Flatten,
    LayerSpec,
    MaxPool,
    ReLU,
)
from engine.trainers import Model

MNIST_FLAT = (784,)
MNIST_IMAGE = (1, 28, 28)
CIFAR_IMAGE = (3, 32, 32)
CUSTOM_PREFIX = "custom:"


@dataclass(frozen=True)
class ModelDefaults:
    dataset: str
    learning_rate: float
    epochs: int


def _hidden(width):
    return LayerSpec([Affine(width), ReLU()])


def _lenet_layers():
    return [
        LayerSpec([Conv2D(20, 5, 5), ReLU(), MaxPool(2, 2)]),
        LayerSpec([Conv2D(50, 5, 5), ReLU(), MaxPool(2, 2), Flatten()]),
        _hidden(500),
        LayerSpec([Affine(10)]),
    ]


def mnist_fc3():
    return MNIST_FLAT, [_hidden(100), _hidden(30), LayerSpec([Affine(10)])]


def mnist_cnn():
    return MNIST_IMAGE, _lenet_layers()


def cifar_cnn2():
    return CIFAR_IMAGE, _lenet_layers()


def cifar_cnn3():
    # 32 -> 28 -> 14 -> 10 -> 5 -> 1: no room for a pool after the third conv
    return CIFAR_IMAGE, [
        LayerSpec([Conv2D(32, 5, 5), ReLU(), MaxPool(2, 2)]),
        LayerSpec([Conv2D(64, 5, 5), ReLU(), AvgPool(2, 2)]),
        LayerSpec([Conv2D(64, 5, 5), ReLU(), Flatten()]),
        _hidden(128),
        LayerSpec([Affine(10)]),
    ]


def fc_stack(width=64, layers=50, input_shape=MNIST_FLAT, outputs=10):
    """`layers` affine layers: layers-1 hidden ones of `width`, then outputs"""
    if layers < 1 or width < 1:
        raise ConfigurationError("fc stack needs at least one layer and unit")
    hidden = [_hidden(width) for _ in range(layers - 1)]
    return input_shape, hidden + [LayerSpec([Affine(outputs)])]


ARCHITECTURES: Dict[str, Tuple[Callable, ModelDefaults]] = {
    "mnist-fc3": (mnist_fc3, ModelDefaults("mnist", 0.01, 100)),
    "mnist-cnn": (mnist_cnn, ModelDefaults("mnist", 0.005, 150)),
    "cifar-cnn2": (cifar_cnn2, ModelDefaults("cifar10", 0.005, 150)),
    "cifar-cnn3": (cifar_cnn3, ModelDefaults("cifar10", 0.005, 100)),
    "fc50": (fc_stack, ModelDefaults("mnist", 0.01, 100)),
}
CUSTOM_DEFAULTS = ModelDefaults("mnist", 0.01, 100)


def _ints(words, line_no, op):
    try:
        return [int(word) for word in words]
    except ValueError:
        raise ConfigurationError(
            f"line {line_no}: {op} takes integer arguments, got {words}"
        ) from None


def _sublayer(text, line_no):
    words = text.split()
    if not words:
        raise ConfigurationError(f"line {line_no}: empty sublayer")
    op, args = words[0].lower(), words[1:]
    arity = {
        "affine": (1, 1),
        "conv2d": (3, 4),
        "relu": (0, 0),
        "maxpool": (2, 2),
        "avgpool": (2, 2),
        "flatten": (0, 0),
    }
    if op not in arity:
        raise ConfigurationError(f"line {line_no}: unknown sublayer {op!r}")
    low, high = arity[op]
    if not low <= len(args) <= high:
        raise ConfigurationError(
            f"line {line_no}: {op} takes {low}..{high} arguments"
        )
    values = _ints(args, line_no, op)
    if op == "affine":
        return Affine(*values)
    if op == "conv2d":
        return Conv2D(*values)
    if op == "relu":
        return ReLU()
    if op == "maxpool":
        return MaxPool(*values)
    if op == "avgpool":
        return AvgPool(*values)
    return Flatten()


def parse_model_file(path):
    """(input_shape, loss, [LayerSpec]) from a custom model file"""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"model file not found: {path}") from None

    input_shape = None
    loss = "softmax_ce"
    layers = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "input":
            if input_shape is not None or layers:
                raise ConfigurationError(
                    f"line {line_no}: input must be declared once, first"
                )
            input_shape = tuple(_ints(rest.split(), line_no, "input"))
            if not input_shape:
                raise ConfigurationError(f"line {line_no}: input needs a shape")
        elif head == "loss":
            loss = rest.strip()
        else:
            layers.append(LayerSpec(
                _sublayer(part, line_no) for part in line.split(",")
            ))
    if input_shape is None:
        raise ConfigurationError(f"{path}: missing `input` line")
    if not layers:
        raise ConfigurationError(f"{path}: no layers")
    return input_shape, loss, layers


def defaults_for(name):
    if name.startswith(CUSTOM_PREFIX):
        return CUSTOM_DEFAULTS
    try:
        return ARCHITECTURES[name][1]
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}, use one of {sorted(ARCHITECTURES)} "
            f"or {CUSTOM_PREFIX}PATH"
        ) from None


def build_model(name, *, rng, precision="f32", width=64, layers=50):
    """
    Build a named architecture (or `custom:PATH`) with weights drawn from
    `rng`. `width` and `layers` only apply to fc50.
    """
    loss = "softmax_ce"
    if name.startswith(CUSTOM_PREFIX):
        input_shape, loss, specs = parse_model_file(name[len(CUSTOM_PREFIX):])
    else:
        defaults_for(name)
        factory = ARCHITECTURES[name][0]
        if name == "fc50":
            input_shape, specs = factory(width=width, layers=layers)
        else:
            input_shape, specs = factory()
    return Model(specs, input_shape, loss, rng=rng, precision=precision)
