"""
Random feedback matrices.

FA replaces the transposed weight W_{i+1}^T used to reach layer i with a
random matrix of the same shape. DFA gives every hidden layer its own
matrix from the output error straight to that layer's output.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import structlog

from engine.exceptions import ConfigurationError, DimensionError
from engine.tensor import (
    Tensor,
    assign_,
    fan_uniform,
    matmul_transpose_right,
    random_fill,
)

log = structlog.get_logger(__name__)

FA = "FA"
DFA = "DFA"
MODES = (FA, DFA)
POLICIES = ("fixed", "per_iteration", "sign_concordant")
SIGN_REFRESH = ("per_iteration", "init")

FEEDBACK_STREAM = 2


@dataclass
class FeedbackMatrix:
    layer_index: int
    matrix: Tensor
    mode: str
    policy: str
    stream_id: Tuple[int, ...]
    magnitude: Optional[Tensor] = field(default=None, repr=False)

    @property
    def input_dim(self):
        return self.matrix.shape[1]

    @property
    def output_dim(self):
        return self.matrix.shape[0]

    def project(self, delta, counts=None, tag=None):
        return project(self, delta, counts=counts, tag=tag)

    def free(self):
        self.matrix.free()
        if self.magnitude is not None:
            self.magnitude.free()


def _draw(rng, shape, dtype, tag, mutable=True):
    return random_fill(rng, shape, fan_uniform(shape[1]), tag=tag,
                       dtype=dtype, mutable=mutable)


def _copy_signs(magnitude, weight):
    # np.copysign keeps a sign for zero weights as well
    return np.copysign(magnitude.data, weight.data.T)


def generate(rng, layer_index, mode, policy, shape=None, weight_ref=None,
             dtype=np.float32):
    """
    Draw a feedback matrix with entries uniform(-1/sqrt(fan), 1/sqrt(fan)),
    fan being its input dimension. FA matrices default to the shape of
    `weight_ref` transposed; sign-concordant ones copy its signs.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown feedback mode {mode!r}")
    if policy not in POLICIES:
        raise ConfigurationError(f"unknown feedback policy {policy!r}")
    if policy == "sign_concordant" and weight_ref is None:
        raise ConfigurationError("sign_concordant feedback needs weight_ref")
    if shape is None:
        if weight_ref is None:
            raise ConfigurationError("feedback needs a shape or weight_ref")
        shape = weight_ref.shape[::-1]
    shape = tuple(int(dim) for dim in shape)
    if weight_ref is not None and policy == "sign_concordant" \
            and shape != weight_ref.shape[::-1]:
        raise DimensionError(
            f"sign-concordant feedback {shape} must match W^T "
            f"{weight_ref.shape[::-1]}"
        )

    tag = f"feedback:R{layer_index}"
    if policy != "sign_concordant":
        matrix = _draw(rng, shape, dtype, tag)
        return FeedbackMatrix(layer_index, matrix, mode, policy, rng.stream)

    magnitude = _draw(rng, shape, dtype, f"feedback:|R|{layer_index}",
                      mutable=False)
    matrix = Tensor(_copy_signs(magnitude, weight_ref), tag, mutable=True)
    return FeedbackMatrix(layer_index, matrix, mode, policy, rng.stream,
                          magnitude=magnitude)


def project(fb, delta, counts=None, tag=None):
    """
    R . delta for a vector, delta . R^T for a batch of row deltas. FA routes
    delta_z of layer i+1 to layer i, DFA routes the output error to layer i.
    """
    if delta.shape[-1] != fb.input_dim:
        source = "delta_z" if fb.mode == FA else "output error"
        raise DimensionError(
            f"{fb.mode} feedback R{fb.layer_index} expects a {source} of "
            f"size {fb.input_dim}, got shape {delta.shape}"
        )
    result = matmul_transpose_right(
        delta, fb.matrix, tag=tag or f"activation:delta_a{fb.layer_index}",
    )
    if counts is not None:
        counts.feedback_projections += 1
    return result


class FeedbackBank:
    """
    Feedback matrices of one model, keyed by the number of the layer whose
    output delta they produce, plus the refresh policy between steps.
    """

    def __init__(self, matrices: Dict[int, FeedbackMatrix], mode, policy,
                 rng, sign_refresh="per_iteration"):
        self.matrices = matrices
        self.mode = mode
        self.policy = policy
        self.rng = rng
        self.sign_refresh = sign_refresh

    @classmethod
    def for_model(cls, model, mode, policy="fixed", rng=None,
                  sign_refresh="per_iteration"):
        if mode not in MODES:
            raise ConfigurationError(f"unknown feedback mode {mode!r}")
        if policy not in POLICIES:
            raise ConfigurationError(f"unknown feedback policy {policy!r}")
        if sign_refresh not in SIGN_REFRESH:
            raise ConfigurationError(f"unknown sign refresh {sign_refresh!r}")
        if policy == "sign_concordant" and mode != FA:
            raise ConfigurationError(
                "sign_concordant feedback is defined for FA only"
            )
        if rng is None:
            raise ConfigurationError("feedback generation needs an Rng")

        bank = cls({}, mode, policy, rng, sign_refresh)
        for number in range(1, model.n):
            bank.matrices[number] = bank._generate(model, number, iteration=0)
        log.info(
            "feedback_generated", mode=mode, policy=policy,
            matrices=len(bank.matrices), nbytes=bank.nbytes,
        )
        return bank

    def _shape_for(self, model, number):
        if self.mode == FA:
            return model.layers[number].head.weight.shape[::-1]
        layer_dim = int(np.prod(model.layers[number - 1].output_shape))
        output_dim = int(np.prod(model.output_shape))
        return (layer_dim, output_dim)

    def _generate(self, model, number, iteration):
        weight_ref = None
        if self.mode == FA:
            weight_ref = model.layers[number].head.weight
        return generate(
            self.rng.substream(FEEDBACK_STREAM, number, iteration),
            number, self.mode, self.policy,
            shape=self._shape_for(model, number),
            weight_ref=weight_ref, dtype=model.dtype,
        )

    def __getitem__(self, number):
        try:
            return self.matrices[number]
        except KeyError:
            raise DimensionError(
                f"no {self.mode} feedback matrix for layer {number}"
            ) from None

    def __len__(self):
        return len(self.matrices)

    @property
    def nbytes(self):
        total = 0
        for fb in self.matrices.values():
            total += fb.matrix.nbytes
            if fb.magnitude is not None:
                total += fb.magnitude.nbytes
        return total

    def refresh(self, iteration, model):
        """apply the policy before step `iteration` (counted from 1)"""
        if self.policy == "fixed":
            return
        for number, fb in self.matrices.items():
            if self.policy == "per_iteration":
                fresh = _draw(
                    self.rng.substream(FEEDBACK_STREAM, number, iteration),
                    fb.matrix.shape, model.dtype, "feedback:scratch",
                )
                assign_(fb.matrix, fresh.data)
                fresh.free()
                fb.stream_id = self.rng.substream(
                    FEEDBACK_STREAM, number, iteration,
                ).stream
            elif self.sign_refresh == "per_iteration":
                weight = model.layers[number].head.weight
                assign_(fb.matrix, _copy_signs(fb.magnitude, weight))

    def free(self):
        for fb in self.matrices.values():
            fb.free()
