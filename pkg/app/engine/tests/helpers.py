"""shared builders for engine tests"""
import struct

import numpy as np

from engine.data import Dataset, DatasetSplit, one_hot
from engine.layers import Affine, Conv2D, Flatten, LayerSpec, MaxPool, ReLU
from engine.ledger import use_ledger
from engine.tensor import Rng
from engine.trainers import Model


def fc_model(widths, input_dim=8, seed=0, precision="f64", loss="softmax_ce"):
    """affine+relu layers of `widths`, the last one without relu"""
    layers = [LayerSpec([Affine(w), ReLU()]) for w in widths[:-1]]
    layers.append(LayerSpec([Affine(widths[-1])]))
    return Model(layers, (input_dim,), loss, rng=Rng(seed),
                 precision=precision)


def conv_model(seed=0, precision="f64"):
    """small conv -> conv -> fc model over 1x8x8 inputs"""
    layers = [
        LayerSpec([Conv2D(3, 3, 3), ReLU(), MaxPool(2, 2)]),
        LayerSpec([Conv2D(4, 2, 2), ReLU(), Flatten()]),
        LayerSpec([Affine(5)]),
    ]
    return Model(layers, (1, 8, 8), "softmax_ce", rng=Rng(seed),
                 precision=precision)


def random_batch(model, batch=4, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch,) + model.input_shape)
    y = one_hot(rng.integers(0, model.output_shape[0], size=batch),
                model.output_shape[0])
    return x, y


def batch_loss(model, x, y):
    with use_ledger(None):
        xt, yt = model.wrap_batch(x, y)
        out = model.forward(xt)
        loss, delta = model.loss_and_delta(out, yt)
        delta.free()
    return loss


def finite_difference(model, x, y, param, eps=1e-6):
    """central differences of the batch loss for every entry of `param`"""
    grad = np.zeros(param.shape)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = batch_loss(model, x, y)
        flat[i] = original - eps
        minus = batch_loss(model, x, y)
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(a, b):
    # entries near zero are compared absolutely
    scale = np.maximum(np.abs(a) + np.abs(b), 1e-3)
    return float(np.max(np.abs(a - b) / scale))


def synthetic_split(count=60, input_shape=(8,), classes=4, seed=0):
    """separable toy data: the class picks which quarter of inputs is hot"""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=count)
    images = rng.uniform(0, 0.1, size=(count,) + input_shape)
    flat = images.reshape(count, -1)
    block = flat.shape[1] // classes
    for row, label in enumerate(labels):
        flat[row, label * block:(label + 1) * block] += 0.9
    images = np.clip(flat.reshape(images.shape), 0, 1).astype(np.float32)
    encoded = one_hot(labels, classes)
    with use_ledger(None):
        return DatasetSplit(
            Dataset(images, encoded, "synthetic-train"),
            Dataset(images[: count // 2], encoded[: count // 2],
                    "synthetic-test"),
        )


def idx_images_bytes(pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    return struct.pack(">4I", 0x803, count, rows, cols) + pixels.tobytes()


def idx_labels_bytes(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", 0x801, labels.size) + labels.tobytes()


def write_mnist_dir(directory, train_count=30, test_count=10, seed=0):
    """fake MNIST files: 28x28 images whose label decides the bright rows"""
    rng = np.random.default_rng(seed)
    names = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                  train_count),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte",
                 test_count),
    }
    for images_name, labels_name, count in names.values():
        labels = rng.integers(0, 10, size=count)
        pixels = rng.integers(0, 30, size=(count, 28, 28))
        for row, label in enumerate(labels):
            pixels[row, 2 * label:2 * label + 3, :] = 255
        (directory / images_name).write_bytes(idx_images_bytes(pixels))
        (directory / labels_name).write_bytes(idx_labels_bytes(labels))
