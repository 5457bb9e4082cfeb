"""
Sublayer operations and the layers built from them.

A layer is one parameterized operation (affine or conv2d) followed by any
number of parameter-free operations. Every operation has a forward pass
that optionally stores what its local backward needs in an
ActivationCache, and a local backward that turns the delta of its output
into the delta of its input plus parameter gradients.

Tensors are batched: the first axis is the sample index and shapes held
by the operations exclude it.
"""
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from engine.exceptions import (
    ContractViolation,
    DimensionError,
    InvalidTargetError,
)
from engine.tensor import (
    Tensor,
    fan_uniform,
    matmul,
    matmul_transpose_left,
    matmul_transpose_right,
    random_fill,
)


@dataclass
class OpCounts:
    forward_matmuls: int = 0
    backward_matmuls: int = 0
    feedback_projections: int = 0

    def as_dict(self):
        return asdict(self)


def _tick(counts, field_name):
    if counts is not None:
        setattr(counts, field_name, getattr(counts, field_name) + 1)


class ActivationCache:
    """tensors (and shapes) one layer keeps for its local backward"""

    def __init__(self):
        self._tensors = {}
        self._meta = {}

    def store(self, index, name, tensor):
        self._tensors[(index, name)] = tensor

    def fetch(self, index, name):
        try:
            return self._tensors[(index, name)]
        except KeyError:
            raise ContractViolation(
                f"cache has no {name!r} for sublayer {index}; "
                "was forward run with a cache?"
            ) from None

    def remember(self, index, name, value):
        self._meta[(index, name)] = value

    def recall(self, index, name):
        try:
            return self._meta[(index, name)]
        except KeyError:
            raise ContractViolation(
                f"cache has no {name!r} for sublayer {index}"
            ) from None

    def holds(self, tensor):
        return any(stored is tensor for stored in self._tensors.values())

    def tensors(self):
        unique = {}
        for stored in self._tensors.values():
            unique[id(stored)] = stored
        return list(unique.values())

    def __len__(self):
        return len(self.tensors())

    def free(self):
        for stored in self.tensors():
            stored.free()
        self._tensors.clear()
        self._meta.clear()


class SublayerOp:
    kind = "op"
    parameterized = False

    def __init__(self):
        self.input_shape = None
        self.output_shape = None
        self.number = 0

    def infer_shape(self, input_shape):
        raise NotImplementedError

    def bind(self, input_shape, number):
        """fix the per-sample input shape, returns the output shape"""
        self.input_shape = tuple(input_shape)
        self.output_shape = tuple(self.infer_shape(self.input_shape))
        self.number = number
        return self.output_shape

    def parameters(self):
        return []

    def describe(self):
        return self.kind

    def _check_input(self, x):
        if self.input_shape is None:
            raise ContractViolation(f"{self.describe()} used before bind()")
        if x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"{self.describe()} expects samples of shape "
                f"{self.input_shape}, got batch {x.shape}"
            )

    def _tag(self, name):
        return f"activation:{name}{self.number}"

    def forward(self, x, cache=None, index=0, counts=None):
        raise NotImplementedError

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.describe()}>"


class Affine(SublayerOp):
    kind = "affine"
    parameterized = True

    def __init__(self, out_dim):
        super().__init__()
        if out_dim <= 0:
            raise DimensionError(f"affine output size must be positive, got {out_dim}")
        self.out_dim = int(out_dim)
        self.weight = None
        self.bias = None

    def infer_shape(self, input_shape):
        if len(input_shape) != 1:
            raise DimensionError(
                f"affine expects flat samples, got shape {input_shape}"
            )
        return (self.out_dim,)

    @property
    def fan_in(self):
        return self.input_shape[0]

    def build_parameters(self, rng, dtype):
        self.weight = random_fill(
            rng, (self.out_dim, self.fan_in), fan_uniform(self.fan_in),
            tag=f"weight:W{self.number}", dtype=dtype, mutable=True,
        )
        self.bias = Tensor.zeros(
            (self.out_dim,), f"bias:b{self.number}", dtype=dtype, mutable=True,
        )

    def parameters(self):
        return [self.weight, self.bias]

    def describe(self):
        return f"affine {self.out_dim}"

    def forward(self, x, cache=None, index=0, counts=None):
        self._check_input(x)
        z = matmul_transpose_right(x, self.weight, tag=self._tag("z"),
                                   bias=self.bias)
        _tick(counts, "forward_matmuls")
        if cache is not None:
            cache.store(index, "input", x)
        return z

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        x = cache.fetch(index, "input")
        batch = delta_out.shape[0]
        weight_grad = matmul_transpose_left(
            delta_out, x, tag=f"grad:dW{self.number}", scale=1.0 / batch,
        )
        bias_grad = Tensor(
            delta_out.data.sum(axis=0) / batch, f"grad:db{self.number}",
        )
        _tick(counts, "backward_matmuls")
        delta_in = None
        if need_input_delta:
            tag = f"activation:delta_a{self.number - 1}"
            if feedback is None:
                delta_in = matmul(delta_out, self.weight, tag=tag)
                _tick(counts, "backward_matmuls")
            else:
                delta_in = feedback.project(delta_out, counts=counts, tag=tag)
        return delta_in, weight_grad, bias_grad


def im2col(images, kernel_h, kernel_w, stride):
    """[b, c, h, w] -> [b*out_h*out_w, c*kernel_h*kernel_w]"""
    batch, channels, height, width = images.shape
    out_h = (height - kernel_h) // stride + 1
    out_w = (width - kernel_w) // stride + 1
    cols = np.empty(
        (batch, channels, kernel_h, kernel_w, out_h, out_w), dtype=images.dtype,
    )
    for y in range(kernel_h):
        y_max = y + stride * out_h
        for x in range(kernel_w):
            x_max = x + stride * out_w
            cols[:, :, y, x, :, :] = images[:, :, y:y_max:stride, x:x_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(batch * out_h * out_w, -1)


def col2im(cols, input_shape, kernel_h, kernel_w, stride):
    """adjoint of im2col, overlapping patches accumulate"""
    batch, channels, height, width = input_shape
    out_h = (height - kernel_h) // stride + 1
    out_w = (width - kernel_w) // stride + 1
    cols = cols.reshape(
        batch, out_h, out_w, channels, kernel_h, kernel_w,
    ).transpose(0, 3, 4, 5, 1, 2)
    images = np.zeros(input_shape, dtype=cols.dtype)
    for y in range(kernel_h):
        y_max = y + stride * out_h
        for x in range(kernel_w):
            x_max = x + stride * out_w
            images[:, :, y:y_max:stride, x:x_max:stride] += cols[:, :, y, x, :, :]
    return images


class Conv2D(SublayerOp):
    """valid convolution computed as a matmul over expanded patches"""
    kind = "conv2d"
    parameterized = True

    def __init__(self, filters, kernel_h, kernel_w, stride=1):
        super().__init__()
        if min(filters, kernel_h, kernel_w, stride) <= 0:
            raise DimensionError("conv2d sizes and stride must be positive")
        self.filters = int(filters)
        self.kernel_h = int(kernel_h)
        self.kernel_w = int(kernel_w)
        self.stride = int(stride)
        self.weight = None
        self.bias = None

    def infer_shape(self, input_shape):
        if len(input_shape) != 3:
            raise DimensionError(
                f"conv2d expects (channels, height, width), got {input_shape}"
            )
        _, height, width = input_shape
        if height < self.kernel_h or width < self.kernel_w:
            raise DimensionError(
                f"conv2d kernel {self.kernel_h}x{self.kernel_w} does not fit "
                f"input {input_shape}"
            )
        out_h = (height - self.kernel_h) // self.stride + 1
        out_w = (width - self.kernel_w) // self.stride + 1
        return (self.filters, out_h, out_w)

    @property
    def fan_in(self):
        return self.input_shape[0] * self.kernel_h * self.kernel_w

    def build_parameters(self, rng, dtype):
        self.weight = random_fill(
            rng, (self.filters, self.fan_in), fan_uniform(self.fan_in),
            tag=f"weight:W{self.number}", dtype=dtype, mutable=True,
        )
        self.bias = Tensor.zeros(
            (self.filters,), f"bias:b{self.number}", dtype=dtype, mutable=True,
        )

    def parameters(self):
        return [self.weight, self.bias]

    def describe(self):
        return (
            f"conv2d {self.filters} {self.kernel_h} {self.kernel_w} "
            f"{self.stride}"
        )

    def _cols(self, x):
        return Tensor(
            im2col(x.data, self.kernel_h, self.kernel_w, self.stride),
            self._tag("cols"),
        )

    def forward(self, x, cache=None, index=0, counts=None):
        self._check_input(x)
        batch = x.shape[0]
        _, out_h, out_w = self.output_shape
        cols = self._cols(x)
        z_rows = matmul_transpose_right(cols, self.weight,
                                        tag=self._tag("zrows"), bias=self.bias)
        cols.free()
        _tick(counts, "forward_matmuls")
        z = Tensor(
            np.ascontiguousarray(
                z_rows.data.reshape(batch, out_h, out_w, self.filters)
                .transpose(0, 3, 1, 2)
            ),
            self._tag("z"),
        )
        z_rows.free()
        if cache is not None:
            cache.store(index, "input", x)
        return z

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        x = cache.fetch(index, "input")
        batch = delta_out.shape[0]
        delta_rows = Tensor(
            np.ascontiguousarray(
                delta_out.data.transpose(0, 2, 3, 1).reshape(-1, self.filters)
            ),
            self._tag("delta_zrows"),
        )
        cols = self._cols(x)
        weight_grad = matmul_transpose_left(
            delta_rows, cols, tag=f"grad:dW{self.number}", scale=1.0 / batch,
        )
        cols.free()
        bias_grad = Tensor(
            delta_rows.data.sum(axis=0) / batch, f"grad:db{self.number}",
        )
        _tick(counts, "backward_matmuls")
        delta_in = None
        if need_input_delta:
            if feedback is None:
                delta_cols = matmul(delta_rows, self.weight,
                                    tag=self._tag("delta_cols"))
                _tick(counts, "backward_matmuls")
            else:
                delta_cols = feedback.project(delta_rows, counts=counts,
                                              tag=self._tag("delta_cols"))
            delta_in = Tensor(
                col2im(delta_cols.data, x.shape, self.kernel_h,
                       self.kernel_w, self.stride),
                f"activation:delta_a{self.number - 1}",
            )
            delta_cols.free()
        delta_rows.free()
        return delta_in, weight_grad, bias_grad


class ReLU(SublayerOp):
    kind = "relu"

    def infer_shape(self, input_shape):
        return input_shape

    def forward(self, x, cache=None, index=0, counts=None):
        self._check_input(x)
        if cache is not None:
            cache.store(index, "z", x)
        return Tensor(np.maximum(x.data, 0), self._tag("a"))

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        z = cache.fetch(index, "z")
        if z.shape != delta_out.shape:
            raise DimensionError(
                f"relu: delta {delta_out.shape} does not match z {z.shape}"
            )
        # derivative at exactly zero is taken as zero
        delta_z = np.where(z.data > 0, delta_out.data, 0)
        return (
            Tensor(delta_z.astype(delta_out.dtype, copy=False),
                   self._tag("delta_z")),
            None,
            None,
        )


def _pooled_shape(kind, size, stride, input_shape):
    if len(input_shape) != 3:
        raise DimensionError(
            f"{kind} expects (channels, height, width), got {input_shape}"
        )
    channels, height, width = input_shape
    if height < size or width < size:
        raise DimensionError(f"{kind} window {size} does not fit {input_shape}")
    return (
        channels,
        (height - size) // stride + 1,
        (width - size) // stride + 1,
    )


def _windows(data, size, stride):
    """[b, c, h, w] -> [b, c, out_h, out_w, size*size] (row-major windows)"""
    view = sliding_window_view(data, (size, size), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]
    return view.reshape(view.shape[:4] + (size * size,))


class MaxPool(SublayerOp):
    kind = "maxpool"

    def __init__(self, size, stride):
        super().__init__()
        self.size = int(size)
        self.stride = int(stride)

    def infer_shape(self, input_shape):
        return _pooled_shape(self.kind, self.size, self.stride, input_shape)

    def describe(self):
        return f"maxpool {self.size} {self.stride}"

    def forward(self, x, cache=None, index=0, counts=None):
        self._check_input(x)
        windows = _windows(x.data, self.size, self.stride)
        # argmax returns the first maximum, i.e. row-major tie-breaking
        argmax = windows.argmax(axis=-1)
        pooled = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
        if cache is not None:
            cache.store(index, "argmax", Tensor(argmax, self._tag("argmax")))
            cache.remember(index, "input_shape", x.shape)
        return Tensor(pooled, self._tag("pool"))

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        argmax = cache.fetch(index, "argmax").data
        input_shape = cache.recall(index, "input_shape")
        batch, channels, out_h, out_w = argmax.shape
        rows = (np.arange(out_h).reshape(1, 1, out_h, 1) * self.stride
                + argmax // self.size)
        cols = (np.arange(out_w).reshape(1, 1, 1, out_w) * self.stride
                + argmax % self.size)
        samples = np.arange(batch).reshape(batch, 1, 1, 1)
        planes = np.arange(channels).reshape(1, channels, 1, 1)
        delta_in = np.zeros(input_shape, dtype=delta_out.dtype)
        np.add.at(delta_in, (samples, planes, rows, cols), delta_out.data)
        return Tensor(delta_in, self._tag("delta_pool")), None, None


class AvgPool(SublayerOp):
    kind = "avgpool"

    def __init__(self, size, stride):
        super().__init__()
        self.size = int(size)
        self.stride = int(stride)

    def infer_shape(self, input_shape):
        return _pooled_shape(self.kind, self.size, self.stride, input_shape)

    def describe(self):
        return f"avgpool {self.size} {self.stride}"

    def forward(self, x, cache=None, index=0, counts=None):
        self._check_input(x)
        pooled = _windows(x.data, self.size, self.stride).mean(axis=-1)
        if cache is not None:
            cache.remember(index, "input_shape", x.shape)
        return Tensor(pooled.astype(x.dtype, copy=False), self._tag("pool"))

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        input_shape = cache.recall(index, "input_shape")
        _, _, out_h, out_w = delta_out.shape
        share = delta_out.data / (self.size * self.size)
        delta_in = np.zeros(input_shape, dtype=delta_out.dtype)
        for y in range(self.size):
            y_max = y + self.stride * out_h
            for x in range(self.size):
                x_max = x + self.stride * out_w
                delta_in[:, :, y:y_max:self.stride, x:x_max:self.stride] += share
        return Tensor(delta_in, self._tag("delta_pool")), None, None


class Flatten(SublayerOp):
    kind = "flatten"

    def infer_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, cache=None, index=0, counts=None):
        self._check_input(x)
        if cache is not None:
            cache.remember(index, "input_shape", x.shape)
        return Tensor(x.data.reshape(x.shape[0], -1), self._tag("flat"))

    def local_backward(self, cache, delta_out, index=0, counts=None,
                       need_input_delta=True, feedback=None):
        input_shape = cache.recall(index, "input_shape")
        return (
            Tensor(delta_out.data.reshape(input_shape), self._tag("delta_flat")),
            None,
            None,
        )


class LayerSpec:
    """
    One parameterized op followed by parameter-free ops.

    A cached forward keeps at most one tensor per sublayer plus the layer
    output, which is the k+1 bound MEM-DFA relies on.
    """

    def __init__(self, sublayers):
        sublayers = list(sublayers)
        if not sublayers:
            raise DimensionError("a layer needs at least one sublayer")
        if not sublayers[0].parameterized:
            raise DimensionError(
                f"a layer must start with affine or conv2d, got {sublayers[0]}"
            )
        if any(op.parameterized for op in sublayers[1:]):
            raise DimensionError("a layer holds exactly one affine/conv2d op")
        self.sublayers = sublayers
        self.number = 0
        self.input_shape = None
        self.output_shape = None

    @property
    def k(self):
        return len(self.sublayers)

    @property
    def head(self):
        return self.sublayers[0]

    def bind(self, input_shape, number, rng, dtype):
        self.number = number
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for op in self.sublayers:
            shape = op.bind(shape, number)
        self.head.build_parameters(rng, dtype)
        self.output_shape = shape
        return shape

    def parameters(self):
        return self.head.parameters()

    def describe(self):
        return ", ".join(op.describe() for op in self.sublayers)

    def forward(self, x, cache=None, counts=None):
        """
        Run every sublayer. Intermediate results are freed unless the cache
        holds them; `x` itself stays with the caller.
        """
        current = x
        for index, op in enumerate(self.sublayers):
            out = op.forward(current, cache=cache, index=index, counts=counts)
            if current is not x and not (cache is not None
                                         and cache.holds(current)):
                current.free()
            current = out
        return current

    def local_backward(self, cache, delta_out, counts=None,
                       need_input_delta=False, feedback=None,
                       release_delta_out=False):
        """
        Backpropagate `delta_out` (delta of the layer output) through the
        sublayers. `feedback` replaces the head's transposed weight when the
        input delta is requested. Returns (delta_in or None, [(param, grad)]).

        `delta_out` is left to the caller unless `release_delta_out` is set,
        in which case it is freed as soon as the last sublayer has used it,
        so at most two deltas are live at any point of the sweep.
        """
        delta = delta_out
        grads = []
        for index in reversed(range(self.k)):
            op = self.sublayers[index]
            is_head = index == 0
            delta_in, weight_grad, bias_grad = op.local_backward(
                cache, delta, index=index, counts=counts,
                need_input_delta=need_input_delta if is_head else True,
                feedback=feedback if is_head else None,
            )
            if delta is not delta_out or release_delta_out:
                delta.free()
            if weight_grad is not None:
                grads.append((op.weight, weight_grad))
                grads.append((op.bias, bias_grad))
            delta = delta_in
        return delta, grads

    def __repr__(self):
        return f"<LayerSpec {self.number}: {self.describe()}>"


def _as_batch_array(array):
    return array if array.ndim > 1 else array[None, :]


def mse_loss_and_delta(prediction, target, tag="activation:delta_out"):
    """loss = mean over samples of 1/2 ||y - a||^2, delta = a - y"""
    if prediction.shape != target.shape:
        raise DimensionError(
            f"mse: prediction {prediction.shape} vs target {target.shape}"
        )
    diff = prediction.data - target.data
    per_sample = 0.5 * np.sum(_as_batch_array(diff) ** 2, axis=1)
    return float(np.mean(per_sample)), Tensor(diff, tag)


def softmax_ce_loss_and_delta(logits, onehot_target, tag="activation:delta_out"):
    """softmax cross-entropy with max subtraction, delta = softmax(z) - y"""
    if logits.shape != onehot_target.shape:
        raise DimensionError(
            f"softmax_ce: logits {logits.shape} vs target {onehot_target.shape}"
        )
    target = _as_batch_array(onehot_target.data)
    if not (np.all((target == 0) | (target == 1))
            and np.all(target.sum(axis=1) == 1)):
        raise InvalidTargetError("softmax_ce target rows must be one-hot")
    z = _as_batch_array(logits.data)
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean(np.sum(target * log_probs, axis=1)))
    delta = np.exp(log_probs) - target
    return loss, Tensor(delta.reshape(logits.shape), tag)


LOSSES = {
    "mse": mse_loss_and_delta,
    "softmax_ce": softmax_ce_loss_and_delta,
}
