"""
Training algorithms over a sequential model.

All four step functions share one layout: wrap the batch, run a forward
pass, turn the loss into the output error, produce per-layer gradients,
then apply every staged gradient with SGD in layer order once the step's
backward work is done. They differ only in how each layer obtains the
delta of its output:

    BP      W_{i+1}^T . delta_z_{i+1}
    FA      R_{i+1}   . delta_z_{i+1}
    DFA     R_i       . delta_a_n
    MEMDFA  as DFA, but the forward pass keeps nothing and each layer is
            recomputed from its input just before its local backward.

Staging the updates means MEMDFA recomputes every layer with the same
weights DFA used, so both produce identical parameters.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import structlog

from engine.data import batches
from engine.exceptions import ConfigurationError, DimensionError, DivergenceError
from engine.feedback import DFA, FA, POLICIES, SIGN_REFRESH, FeedbackBank
from engine.ledger import (
    MemoryTimeline,
    active_ledger,
    ledger_phase,
    peak_activation_bytes,
    use_ledger,
)
from engine.layers import LOSSES, ActivationCache, OpCounts
from engine.tensor import (
    PRECISIONS,
    Rng,
    Tensor,
    all_finite,
    dtype_for,
    scaled_subtract_,
)

log = structlog.get_logger(__name__)

ALGORITHMS = ("BP", "FA", "DFA", "MEMDFA")
WEIGHT_STREAM = 1
SHUFFLE_STREAM = 3


class Model:
    """sequential network of LayerSpecs with its parameters built"""

    def __init__(self, layers, input_shape, loss="softmax_ce", *, rng,
                 precision="f32"):
        if loss not in LOSSES:
            raise ConfigurationError(
                f"unknown loss {loss!r}, use one of {sorted(LOSSES)}"
            )
        if not layers:
            raise DimensionError("a model needs at least one layer")
        self.layers = list(layers)
        self.input_shape = tuple(int(dim) for dim in input_shape)
        self.loss = loss
        self.precision = precision
        self.dtype = dtype_for(precision)

        shape = self.input_shape
        with ledger_phase("io"):
            for number, layer in enumerate(self.layers, start=1):
                shape = layer.bind(
                    shape, number, rng.substream(WEIGHT_STREAM, number),
                    self.dtype,
                )
        if len(shape) != 1:
            raise DimensionError(
                f"the last layer must produce a flat vector, got {shape}"
            )
        self.output_shape = shape

    @property
    def n(self):
        return len(self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def parameter_bytes(self):
        return sum(p.nbytes for p in self.parameters())

    def snapshot(self):
        return [np.array(p.data) for p in self.parameters()]

    def describe(self):
        return [layer.describe() for layer in self.layers]

    def wrap_batch(self, batch_x, batch_y=None):
        """ledgered input/target tensors in the model's precision"""
        batch_x = np.asarray(batch_x)
        try:
            x = batch_x.astype(self.dtype, copy=False).reshape(
                (batch_x.shape[0],) + self.input_shape
            )
        except ValueError:
            raise DimensionError(
                f"batch {batch_x.shape} does not fit input {self.input_shape}"
            ) from None
        x = Tensor(x, "activation:a0")
        if batch_y is None:
            return x, None
        y = np.asarray(batch_y).astype(self.dtype, copy=False)
        if y.shape != (x.shape[0],) + self.output_shape:
            x.free()
            raise DimensionError(
                f"targets {y.shape} do not match outputs {self.output_shape}"
            )
        return x, Tensor(y, "input:y")

    def forward(self, x, counts=None):
        """forward pass keeping no intermediate results; `x` stays live"""
        current = x
        for layer in self.layers:
            out = layer.forward(current, cache=None, counts=counts)
            if current is not x:
                current.free()
            current = out
        return current

    def predict(self, batch_x):
        x, _ = self.wrap_batch(batch_x)
        out = self.forward(x)
        logits = np.array(out.data)
        out.free()
        x.free()
        return logits

    def loss_and_delta(self, prediction, target):
        return LOSSES[self.loss](
            prediction, target, tag=f"activation:delta_a{self.n}",
        )

    def __repr__(self):
        return f"<Model {self.input_shape} -> {self.output_shape}, {self.n} layers>"


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "BP"
    learning_rate: float = 0.01
    batch_size: int = 100
    epochs: int = 10
    seed: int = 0
    feedback_policy: str = "fixed"
    sign_refresh: str = "per_iteration"
    precision: str = "f32"
    max_steps: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", self.algorithm.upper())
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(
                f"unknown algorithm {self.algorithm!r}, use one of {ALGORITHMS}"
            )
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ConfigurationError("batch_size must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must not be negative")
        if self.seed < 0:
            raise ConfigurationError("seed must not be negative")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ConfigurationError("max_steps must be positive")
        if self.feedback_policy not in POLICIES:
            raise ConfigurationError(
                f"unknown feedback policy {self.feedback_policy!r}"
            )
        if self.sign_refresh not in SIGN_REFRESH:
            raise ConfigurationError(
                f"unknown sign refresh {self.sign_refresh!r}"
            )
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"unknown precision {self.precision!r}")
        if self.feedback_policy == "sign_concordant" and self.algorithm != "FA":
            raise ConfigurationError(
                "sign_concordant feedback is only defined for FA"
            )

    @property
    def feedback_mode(self):
        if self.algorithm == "BP":
            return None
        return FA if self.algorithm == "FA" else DFA


@dataclass
class StepReport:
    loss: float
    grads_applied: int
    op_counts: Dict[str, int]
    timeline_slice: MemoryTimeline

    @property
    def peak_activation_bytes(self):
        return peak_activation_bytes(self.timeline_slice)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float


@dataclass
class TrainingResult:
    history: List[EpochRecord] = field(default_factory=list)
    peak_activation_bytes: int = 0
    op_counts: Dict[str, int] = field(default_factory=dict)
    steps: int = 0

    @property
    def final_accuracy(self):
        return self.history[-1].test_accuracy if self.history else None


def sgd_update(param, grad, lr):
    """param <- param - lr * grad, in place"""
    if param.shape != grad.shape:
        raise DimensionError(
            f"gradient {grad.shape} does not match {param.tag} {param.shape}"
        )
    scaled_subtract_(param, grad, lr)


def _ledger_seq():
    ledger = active_ledger()
    return ledger.last_seq if ledger is not None else 0


def _slice_since(seq):
    ledger = active_ledger()
    if ledger is None:
        return MemoryTimeline()
    return ledger.since(seq)


def _check_loss(loss):
    if not math.isfinite(loss):
        raise DivergenceError("loss", f"loss became {loss}")


def _check_tensor(tensor):
    if not all_finite(tensor):
        raise DivergenceError(tensor.tag)


def _apply_updates(staged, lr):
    applied = 0
    with ledger_phase("update"):
        for layer_grads in staged:
            for param, grad in layer_grads:
                sgd_update(param, grad, lr)
                grad.free()
                applied += 1
    return applied


def _cached_forward(model, x, counts):
    """forward pass keeping one ActivationCache per layer"""
    caches = []
    current = x
    with ledger_phase("forward"):
        for layer in model.layers:
            cache = ActivationCache()
            out = layer.forward(current, cache=cache, counts=counts)
            if not cache.holds(current):
                current.free()
            caches.append(cache)
            current = out
    return caches, current


def _output_error(model, prediction, y):
    loss, delta = model.loss_and_delta(prediction, y)
    prediction.free()
    y.free()
    _check_loss(loss)
    _check_tensor(delta)
    return loss, delta


def _direct_delta(feedback, layer, delta_n, counts):
    """delta_a_i = R_i . delta_a_n, shaped like the layer output"""
    projected = feedback[layer.number].project(delta_n, counts=counts)
    if len(layer.output_shape) > 1:
        reshaped = Tensor(
            projected.data.reshape((projected.shape[0],) + layer.output_shape),
            projected.tag,
        )
        projected.free()
        projected = reshaped
    _check_tensor(projected)
    return projected


def _require_mode(feedback, mode):
    if feedback is None:
        raise ConfigurationError(f"{mode} training needs feedback matrices")
    if feedback.mode != mode:
        raise ConfigurationError(
            f"expected {mode} feedback matrices, got {feedback.mode}"
        )


def _chain_gradients(model, batch_x, batch_y, counts, feedback=None):
    with ledger_phase("io"):
        x, y = model.wrap_batch(batch_x, batch_y)
    caches, prediction = _cached_forward(model, x, counts)

    staged = [None] * model.n
    with ledger_phase("backward"):
        loss, delta = _output_error(model, prediction, y)
        for index in reversed(range(model.n)):
            layer = model.layers[index]
            route = None
            if feedback is not None and index > 0:
                route = feedback[index]
            delta_in, staged[index] = layer.local_backward(
                caches[index], delta, counts=counts,
                need_input_delta=index > 0, feedback=route,
            )
            delta.free()
            caches[index].free()
            if delta_in is not None:
                _check_tensor(delta_in)
            delta = delta_in
    return loss, staged


def gradients(model, batch_x, batch_y, feedback=None):
    """
    Loss and per-parameter gradient arrays of one batch without updating,
    through W^T (or FA feedback when given). Used by gradient checks.
    """
    loss, staged = _chain_gradients(model, batch_x, batch_y, OpCounts(),
                                    feedback)
    pairs = []
    for layer_grads in staged:
        for param, grad in layer_grads:
            pairs.append((param, np.array(grad.data)))
            grad.free()
    return loss, pairs


def _chain_step(model, batch_x, batch_y, lr, feedback=None):
    counts = OpCounts()
    start = _ledger_seq()
    loss, staged = _chain_gradients(model, batch_x, batch_y, counts, feedback)
    applied = _apply_updates(staged, lr)
    return StepReport(loss, applied, counts.as_dict(), _slice_since(start))


def bp_step(model, batch_x, batch_y, lr):
    """backpropagation through transposed weights"""
    return _chain_step(model, batch_x, batch_y, lr)


def fa_step(model, batch_x, batch_y, lr, feedback):
    """backpropagation with R_{i+1} in place of W_{i+1}^T"""
    _require_mode(feedback, FA)
    return _chain_step(model, batch_x, batch_y, lr, feedback=feedback)


def dfa_step(model, batch_x, batch_y, lr, feedback):
    _require_mode(feedback, DFA)
    counts = OpCounts()
    start = _ledger_seq()
    with ledger_phase("io"):
        x, y = model.wrap_batch(batch_x, batch_y)
    caches, prediction = _cached_forward(model, x, counts)

    staged = [None] * model.n
    with ledger_phase("backward"):
        loss, delta_n = _output_error(model, prediction, y)
        for index in reversed(range(model.n)):
            layer = model.layers[index]
            if index == model.n - 1:
                delta_a = delta_n
            else:
                delta_a = _direct_delta(feedback, layer, delta_n, counts)
            _, staged[index] = layer.local_backward(
                caches[index], delta_a, counts=counts,
                release_delta_out=delta_a is not delta_n,
            )
            caches[index].free()
        delta_n.free()

    applied = _apply_updates(staged, lr)
    return StepReport(loss, applied, counts.as_dict(), _slice_since(start))


def memdfa_step(model, batch_x, batch_y, lr, feedback):
    """
    DFA with one layer's intermediate vectors alive at a time.

    Phase one runs the whole model keeping only the input. Phase two walks
    the layers from the first: recompute the layer with a cache, project
    the output error onto its output (the last layer uses the error as
    is), backpropagate inside the layer and drop everything but the
    layer's output, which feeds the next layer.
    """
    _require_mode(feedback, DFA)
    counts = OpCounts()
    start = _ledger_seq()
    with ledger_phase("io"):
        x, y = model.wrap_batch(batch_x, batch_y)

    with ledger_phase("forward"):
        prediction = model.forward(x, counts=counts)
    with ledger_phase("backward"):
        loss, delta_n = _output_error(model, prediction, y)

    staged = []
    layer_input = x
    for index, layer in enumerate(model.layers):
        cache = ActivationCache()
        with ledger_phase("local-forward"):
            out = layer.forward(layer_input, cache=cache, counts=counts)
            if not cache.holds(layer_input):
                layer_input.free()
        with ledger_phase("local-backward"):
            if index == model.n - 1:
                delta_a = delta_n
            else:
                delta_a = _direct_delta(feedback, layer, delta_n, counts)
            _, grads = layer.local_backward(
                cache, delta_a, counts=counts,
                release_delta_out=delta_a is not delta_n,
            )
            cache.free()
        staged.append(grads)
        layer_input = out
    layer_input.free()
    delta_n.free()

    applied = _apply_updates(staged, lr)
    return StepReport(loss, applied, counts.as_dict(), _slice_since(start))


def run_step(algorithm, model, batch_x, batch_y, lr, feedback=None):
    algorithm = algorithm.upper()
    if algorithm == "BP":
        return bp_step(model, batch_x, batch_y, lr)
    if algorithm == "FA":
        return fa_step(model, batch_x, batch_y, lr, feedback)
    if algorithm == "DFA":
        return dfa_step(model, batch_x, batch_y, lr, feedback)
    if algorithm == "MEMDFA":
        return memdfa_step(model, batch_x, batch_y, lr, feedback)
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


def evaluate(model, dataset, batch_size=1000, workers=1):
    """
    Fraction of samples whose argmax prediction matches the label (ties go
    to the lowest index). Chunks may be scored on several threads; the
    integer hit counts make the result order independent.
    """
    count = len(dataset)
    if count == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    images = dataset.images.data
    labels = dataset.labels_onehot.data

    def hits(start):
        with use_ledger(None):
            logits = model.predict(images[start:start + batch_size])
        expected = np.argmax(labels[start:start + batch_size], axis=1)
        return int(np.sum(np.argmax(logits, axis=1) == expected))

    starts = range(0, count, batch_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            total = sum(pool.map(hits, starts))
    else:
        total = sum(hits(start) for start in starts)
    return total / count


def build_feedback(model, config):
    mode = config.feedback_mode
    if mode is None:
        return None
    with ledger_phase("io"):
        return FeedbackBank.for_model(
            model, mode, policy=config.feedback_policy,
            rng=Rng(config.seed), sign_refresh=config.sign_refresh,
        )


def train(model, config, datasets, feedback=None, on_step=None,
          eval_workers=1):
    """
    Run `config.epochs` epochs of seeded minibatch SGD and evaluate on the
    test split after each. Returns the per-epoch history with the peak
    per-step activation bytes and the per-step op counts.
    """
    if feedback is None:
        feedback = build_feedback(model, config)
    rng = Rng(config.seed)
    result = TrainingResult()
    log.info(
        "training_started", algorithm=config.algorithm, layers=model.n,
        lr=config.learning_rate, batch=config.batch_size,
        epochs=config.epochs, seed=config.seed,
    )

    for epoch in range(1, config.epochs + 1):
        losses = []
        started = time.perf_counter()
        epoch_batches = batches(
            datasets.train, config.batch_size,
            rng.substream(SHUFFLE_STREAM, epoch),
        )
        for step, (batch_x, batch_y) in enumerate(epoch_batches):
            if config.max_steps is not None and step >= config.max_steps:
                break
            result.steps += 1
            if feedback is not None:
                with ledger_phase("update"):
                    feedback.refresh(result.steps, model)
            report = run_step(
                config.algorithm, model, batch_x, batch_y,
                config.learning_rate, feedback,
            )
            losses.append(report.loss)
            result.peak_activation_bytes = max(
                result.peak_activation_bytes, report.peak_activation_bytes,
            )
            result.op_counts = report.op_counts
            if on_step is not None:
                on_step(report)

        accuracy = evaluate(model, datasets.test, workers=eval_workers)
        record = EpochRecord(epoch, float(np.mean(losses)), accuracy)
        result.history.append(record)
        log.info(
            "epoch_finished", epoch=epoch, train_loss=record.train_loss,
            test_accuracy=accuracy, steps=result.steps,
            seconds=round(time.perf_counter() - started, 3),
        )
    return result
