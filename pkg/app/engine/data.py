"""
MNIST IDX and CIFAR-10 binary loaders plus seeded batching.

Pixels are scaled by 1/255 and nothing else; labels become one-hot rows.
"""
import gzip
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np
import structlog

from engine.exceptions import (
    BadMagicError,
    ConfigurationError,
    CountMismatchError,
    DataMissingError,
    LabelRangeError,
    RecordAlignmentError,
    TruncatedFileError,
)
from engine.tensor import Tensor

log = structlog.get_logger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

CIFAR_SHAPE = (3, 32, 32)
CIFAR_RECORD = 1 + 3 * 32 * 32
NUM_CLASSES = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


class Dataset:
    """images [count x ...] in [0, 1] with one-hot label rows"""

    def __init__(self, images, labels_onehot, name):
        if len(images) != len(labels_onehot):
            raise CountMismatchError(
                name, f"{len(images)} images but {len(labels_onehot)} labels"
            )
        self.images = images if isinstance(images, Tensor) else \
            Tensor(images, f"dataset:{name}:images")
        self.labels_onehot = labels_onehot if isinstance(labels_onehot, Tensor) \
            else Tensor(labels_onehot, f"dataset:{name}:labels")
        self.name = name

    def __len__(self):
        return self.images.shape[0]

    @property
    def num_classes(self):
        return self.labels_onehot.shape[1]

    def __repr__(self):
        return f"<Dataset {self.name} {self.images.shape}>"


class DatasetSplit(NamedTuple):
    train: Dataset
    test: Dataset


def one_hot(labels, num_classes=NUM_CLASSES):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels outside 0..{num_classes - 1}")
    encoded = np.zeros((labels.size, num_classes), dtype=np.float32)
    encoded[np.arange(labels.size), labels] = 1.0
    return encoded


def _check_labels(path, labels):
    if labels.size and labels.max() >= NUM_CLASSES:
        raise LabelRangeError(
            path, f"label {labels.max()} outside 0..{NUM_CLASSES - 1}"
        )


def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise DataMissingError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return path, raw


def _idx_header(path, raw, magic, dims):
    size = 4 * (1 + dims)
    if len(raw) < size:
        raise TruncatedFileError(path, f"header needs {size} bytes, got {len(raw)}")
    found, *shape = struct.unpack(f">{1 + dims}I", raw[:size])
    if found != magic:
        raise BadMagicError(
            path, f"magic 0x{found:08x}, expected 0x{magic:08x}"
        )
    return shape, raw[size:]


def read_idx_images(path):
    path, raw = _read_bytes(path)
    (count, rows, cols), body = _idx_header(path, raw, IDX_IMAGE_MAGIC, 3)
    expected = count * rows * cols
    if len(body) < expected:
        raise TruncatedFileError(
            path, f"{count} images need {expected} bytes, got {len(body)}"
        )
    pixels = np.frombuffer(body, dtype=np.uint8, count=expected)
    return pixels.reshape(count, 1, rows, cols)


def read_idx_labels(path):
    path, raw = _read_bytes(path)
    (count,), body = _idx_header(path, raw, IDX_LABEL_MAGIC, 1)
    if len(body) < count:
        raise TruncatedFileError(
            path, f"{count} labels need {count} bytes, got {len(body)}"
        )
    labels = np.frombuffer(body, dtype=np.uint8, count=count)
    _check_labels(path, labels)
    return labels


def load_mnist_idx(images_path, labels_path, name="mnist"):
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(pixels) != len(labels):
        raise CountMismatchError(
            images_path,
            f"{len(pixels)} images but {len(labels)} labels in {labels_path}",
        )
    dataset = Dataset(
        pixels.astype(np.float32) / 255.0, one_hot(labels), name,
    )
    log.info("dataset_loaded", name=name, count=len(dataset),
             shape=dataset.images.shape[1:])
    return dataset


def load_cifar10_binary(batch_paths, name="cifar10"):
    images, labels = [], []
    for batch_path in batch_paths:
        path, raw = _read_bytes(batch_path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise RecordAlignmentError(
                path,
                f"length {len(raw)} is not a multiple of {CIFAR_RECORD}",
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        _check_labels(path, records[:, 0])
        labels.append(records[:, 0])
        images.append(records[:, 1:].reshape((-1,) + CIFAR_SHAPE))
    if not images:
        raise DataMissingError("no CIFAR-10 batch files given")
    dataset = Dataset(
        np.concatenate(images).astype(np.float32) / 255.0,
        one_hot(np.concatenate(labels)),
        name,
    )
    log.info("dataset_loaded", name=name, count=len(dataset),
             batches=len(batch_paths))
    return dataset


def load_mnist_dir(directory):
    directory = Path(directory)
    parts = {
        split: load_mnist_idx(directory / images, directory / labels,
                              name=f"mnist-{split}")
        for split, (images, labels) in MNIST_FILES.items()
    }
    return DatasetSplit(parts["train"], parts["test"])


def load_cifar10_dir(directory):
    directory = Path(directory)
    nested = directory / "cifar-10-batches-bin"
    if nested.is_dir():
        directory = nested
    return DatasetSplit(
        load_cifar10_binary([directory / f for f in CIFAR_TRAIN_FILES],
                            name="cifar10-train"),
        load_cifar10_binary([directory / f for f in CIFAR_TEST_FILES],
                            name="cifar10-test"),
    )


def batches(dataset, batch_size, rng):
    """
    Yield (x, y) array batches in a seeded Fisher-Yates order; the final
    short batch is kept.
    """
    if batch_size <= 0:
        raise ConfigurationError(f"batch size must be positive, got {batch_size}")
    count = len(dataset)
    if batch_size > count:
        raise ConfigurationError(
            f"batch size {batch_size} exceeds dataset size {count}"
        )
    order = rng.generator().permutation(count)
    images = dataset.images.data
    labels = dataset.labels_onehot.data
    for start in range(0, count, batch_size):
        index = order[start:start + batch_size]
        yield images[index], labels[index]
