"""
Drive one training run from a RunManifest and write its artifacts:
`history.csv`, `memory.csv` and `manifest` in the run's output directory.
"""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog

from engine.architectures import build_model
from engine.data import load_cifar10_dir, load_mnist_dir
from engine.exceptions import DataMissingError
from engine.ledger import MemoryLedger, export_csv, use_ledger
from engine.tensor import Rng
from engine.trainers import train

log = structlog.get_logger(__name__)

HISTORY_HEADER = ["epoch", "train_loss", "test_accuracy"]
COMPARE_HEADER = [
    "algo", "final_accuracy", "peak_activation_bytes",
    "forward_matmuls", "backward_matmuls",
]
LOADERS = {
    "mnist": load_mnist_dir,
    "cifar10": load_cifar10_dir,
}


@dataclass
class RunOutcome:
    manifest: object
    result: object
    ledger: MemoryLedger
    output_dir: Path

    @property
    def history_path(self):
        return self.output_dir / "history.csv"

    @property
    def memory_path(self):
        return self.output_dir / "memory.csv"


def dataset_for(model, manifest):
    """named models carry their dataset, custom ones go by input size"""
    if manifest.model_name.startswith("custom:"):
        return "cifar10" if int(np.prod(model.input_shape)) == 3 * 32 * 32 \
            else "mnist"
    return manifest.dataset


def load_datasets(name, data_dir):
    if data_dir is None:
        raise DataMissingError(f"no data directory configured for {name}")
    if not Path(data_dir).is_dir():
        raise DataMissingError(f"data directory not found: {data_dir}")
    with use_ledger(None):
        return LOADERS[name](data_dir)


def write_history(history, path):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for record in history:
            writer.writerow([
                record.epoch, repr(record.train_loss),
                repr(record.test_accuracy),
            ])


def write_compare(outcomes, path):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(COMPARE_HEADER)
        for outcome in outcomes:
            result = outcome.result
            accuracy = result.final_accuracy
            writer.writerow([
                outcome.manifest.config.algorithm.lower(),
                "" if accuracy is None else repr(accuracy),
                result.peak_activation_bytes,
                result.op_counts.get("forward_matmuls", 0),
                result.op_counts.get("backward_matmuls", 0),
            ])


def run_training(manifest, datasets=None):
    """
    Build the model under a fresh ledger, train it and write the run's
    files. `datasets` skips loading when the caller already holds them.
    """
    output_dir = Path(manifest.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config = manifest.config

    ledger = MemoryLedger()
    with use_ledger(ledger):
        model = build_model(
            manifest.model_name, rng=Rng(config.seed),
            precision=config.precision, width=manifest.width,
            layers=manifest.layers,
        )
        if datasets is None:
            datasets = load_datasets(dataset_for(model, manifest),
                                     manifest.data_dir)
        result = train(model, config, datasets,
                       eval_workers=manifest.eval_workers)

    outcome = RunOutcome(manifest, result, ledger, output_dir)
    write_history(result.history, outcome.history_path)
    export_csv(ledger.timeline, outcome.memory_path)
    manifest.write(output_dir / "manifest")
    log.info(
        "run_finished", algorithm=config.algorithm,
        model=manifest.model_name, output_dir=str(output_dir),
        peak_activation_bytes=result.peak_activation_bytes,
        final_accuracy=result.final_accuracy,
    )
    return outcome
