"""Stateful layers with exact backward passes, plus the composite blocks.

Every layer consumes and produces batched arrays (leading batch axis).
``forward`` caches whatever ``backward`` needs; calling ``backward`` first
raises StateError. Parameter-bearing layers allocate their tensors at
construction (zero-filled) and are populated by ``init_parameters``.

Parameter gradients live on the layer (``named_gradients``) and are
overwritten by each backward pass; input gradients are returned.
"""

from __future__ import annotations

import numpy as np

from . import tensor
from .errors import ConfigError, ShapeError, StateError
from .tensor import ConvSpec, same_padding

_PROB_LO = np.nextafter(0.0, 1.0)
_PROB_HI = np.nextafter(1.0, 0.0)


def _resolve_padding(padding, kernel):
    if padding == "same":
        return same_padding(kernel)
    if padding == "valid":
        return (0, 0, 0)
    return tuple(int(p) for p in padding)


class Layer:
    """Base layer: forward/backward pair plus a named-parameter registry."""

    kind = "Layer"

    def __init__(self):
        self._cache = None

    # -- autodiff interface -------------------------------------------------
    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_output):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}.backward called before forward")
        return self._cache

    # -- parameter registry --------------------------------------------------
    def named_parameters(self):
        """(name, tensor) pairs in a fixed order; empty for stateless layers."""
        return []

    def named_gradients(self):
        """(name, gradient) pairs aligned one-to-one with named_parameters."""
        return []

    def initialize(self, rng):
        """Draw this layer's parameters from ``rng`` (no-op when stateless)."""

    def output_shape(self, input_shape):
        """Propagate a per-sample shape tuple through the layer's shape law."""
        return tuple(input_shape)


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad_output):
        return np.where(self._need_cache(), grad_output, 0.0)


class Sigmoid(Layer):
    """Logistic activation, numerically stable on both tails.

    Outputs are clamped to the largest open subinterval of (0,1)
    representable in float64, so downstream log-likelihoods stay finite.
    """

    kind = "Sigmoid"

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        np.clip(out, _PROB_LO, _PROB_HI, out=out)
        self._cache = out
        return out

    def backward(self, grad_output):
        s = self._need_cache()
        return grad_output * s * (1.0 - s)


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_output):
        return grad_output.reshape(self._need_cache())

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Dense(Layer):
    """Affine map on [B, in_features] with weights [in, out] and bias [out]."""

    kind = "Dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ShapeError("Dense feature counts must be positive",
                             actual=(in_features, out_features))
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.weights = np.zeros((self.in_features, self.out_features))
        self.bias = np.zeros(self.out_features)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                "Dense input must be [B, in_features]",
                expected=(None, self.in_features),
                actual=x.shape,
            )
        self._cache = x
        return tensor.matmul(x, self.weights) + self.bias

    def backward(self, grad_output):
        x = self._need_cache()
        self.grad_weights[...] = tensor.matmul(x.T, grad_output)
        self.grad_bias[...] = grad_output.sum(axis=0)
        return tensor.matmul(grad_output, self.weights.T)

    def named_parameters(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def named_gradients(self):
        return [("weights", self.grad_weights), ("bias", self.grad_bias)]

    def initialize(self, rng):
        std = np.sqrt(2.0 / self.in_features)
        self.weights[...] = rng.normal(0.0, std, self.weights.shape)
        self.bias[...] = 0.0

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(
                "Dense fan-in mismatch", expected=(self.in_features,), actual=input_shape
            )
        return (self.out_features,)


class Conv3D(Layer):
    """3D cross-correlation layer over [B, C, D, H, W]."""

    kind = "Conv3D"

    def __init__(self, in_channels, out_channels, kernel=(3, 3, 3),
                 stride=(1, 1, 1), padding=(0, 0, 0)):
        super().__init__()
        kernel = tuple(int(k) for k in kernel)
        self.spec = ConvSpec(kernel, stride, _resolve_padding(padding, kernel))
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive",
                             actual=(in_channels, out_channels))
        self.kernels = np.zeros((self.out_channels, self.in_channels) + kernel)
        self.bias = np.zeros(self.out_channels)
        self.grad_kernels = np.zeros_like(self.kernels)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x):
        self._cache = x
        return tensor.conv3d_forward_batch(x, self.kernels, self.bias, self.spec)

    def backward(self, grad_output):
        x = self._need_cache()
        grad_x, gk, gb = tensor.conv3d_backward_batch(x, self.kernels, self.spec, grad_output)
        self.grad_kernels[...] = gk
        self.grad_bias[...] = gb
        return grad_x

    def named_parameters(self):
        return [("kernels", self.kernels), ("bias", self.bias)]

    def named_gradients(self):
        return [("kernels", self.grad_kernels), ("bias", self.grad_bias)]

    def initialize(self, rng):
        fan_in = self.in_channels * int(np.prod(self.spec.kernel))
        self.kernels[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), self.kernels.shape)
        self.bias[...] = 0.0

    def output_shape(self, input_shape):
        c, d, h, w = input_shape
        if c != self.in_channels:
            raise ShapeError("conv channel mismatch", expected=self.in_channels, actual=c)
        return (self.out_channels,) + self.spec.out_extent((d, h, w))


class MaxPool3D(Layer):
    kind = "MaxPool3D"

    def __init__(self, window=(2, 2, 2), stride=(2, 2, 2), padding=(0, 0, 0)):
        super().__init__()
        self.window = tuple(int(w) for w in window)
        self.stride = tuple(int(s) for s in stride)
        self.padding = _resolve_padding(padding, self.window)

    def forward(self, x):
        out, idx = tensor.maxpool3d_forward_batch(x, self.window, self.stride, self.padding)
        self._cache = (idx, x.shape[1:])
        return out

    def backward(self, grad_output):
        idx, in_shape = self._need_cache()
        return tensor.maxpool3d_backward_batch(grad_output, idx, in_shape)

    def output_shape(self, input_shape):
        c, d, h, w = input_shape
        extents = ConvSpec(self.window, self.stride, self.padding).out_extent((d, h, w))
        return (c,) + extents


class GlobalAvgPool(Layer):
    """Mean over the spatial axes: [B, C, D, H, W] -> [B, C]."""

    kind = "GlobalAvgPool"

    def forward(self, x):
        if x.ndim != 5:
            raise ShapeError("global average pool expects [B, C, D, H, W]", actual=x.shape)
        self._cache = x.shape
        return x.mean(axis=(2, 3, 4))

    def backward(self, grad_output):
        shape = self._need_cache()
        n = shape[2] * shape[3] * shape[4]
        return np.broadcast_to(
            grad_output[:, :, None, None, None] / n, shape
        ).copy()

    def output_shape(self, input_shape):
        return (input_shape[0],)


class Sequence(Layer):
    """A chain of layers applied in order."""

    kind = "Sequence"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._cache = True
        return x

    def backward(self, grad_output):
        self._need_cache()
        for layer in reversed(self.layers):
            grad_output = layer.backward(grad_output)
        return grad_output

    def named_parameters(self):
        return [
            (f"{i}.{n}", p)
            for i, layer in enumerate(self.layers)
            for n, p in layer.named_parameters()
        ]

    def named_gradients(self):
        return [
            (f"{i}.{n}", g)
            for i, layer in enumerate(self.layers)
            for n, g in layer.named_gradients()
        ]

    def initialize(self, rng):
        for layer in self.layers:
            layer.initialize(rng)

    def output_shape(self, input_shape):
        for layer in self.layers:
            input_shape = layer.output_shape(input_shape)
        return tuple(input_shape)


class ConcatBranches(Layer):
    """Parallel branches merged by channel concatenation.

    ``input_mode="shared"`` feeds the whole input to every branch and sums
    the branch input-gradients on the way back. ``input_mode="split"``
    deals the input channels evenly across branches (one contiguous slice
    each) and concatenates the input-gradients instead.
    """

    kind = "ConcatBranches"

    def __init__(self, branches, input_mode="shared"):
        super().__init__()
        if not branches:
            raise ShapeError("ConcatBranches needs at least one branch")
        if input_mode not in ("shared", "split"):
            raise ConfigError(f"unknown input_mode {input_mode!r}")
        self.branches = list(branches)
        self.input_mode = input_mode

    def _split(self, x):
        n = len(self.branches)
        if x.shape[1] % n:
            raise ShapeError(
                "input channels do not divide evenly across branches",
                expected=f"multiple of {n}",
                actual=x.shape[1],
            )
        return tensor.split_channels(x, [x.shape[1] // n] * n, axis=1)

    def forward(self, x):
        inputs = self._split(x) if self.input_mode == "split" else [x] * len(self.branches)
        outs = [b.forward(xi) for b, xi in zip(self.branches, inputs)]
        ref = outs[0].shape[2:]
        for i, o in enumerate(outs):
            if o.shape[2:] != ref or o.shape[0] != outs[0].shape[0]:
                raise ShapeError(
                    f"branch {i} output extent disagrees at the merge",
                    expected=ref,
                    actual=o.shape[2:],
                )
        self._cache = [o.shape[1] for o in outs]
        return tensor.concat_channels(outs, axis=1)

    def backward(self, grad_output):
        sizes = self._need_cache()
        parts = tensor.split_channels(grad_output, sizes, axis=1)
        grads = [b.backward(g) for b, g in zip(self.branches, parts)]
        if self.input_mode == "split":
            return tensor.concat_channels(grads, axis=1)
        total = grads[0]
        for g in grads[1:]:
            total = total + g
        return total

    def named_parameters(self):
        return [
            (f"b{i}.{n}", p)
            for i, b in enumerate(self.branches)
            for n, p in b.named_parameters()
        ]

    def named_gradients(self):
        return [
            (f"b{i}.{n}", g)
            for i, b in enumerate(self.branches)
            for n, g in b.named_gradients()
        ]

    def initialize(self, rng):
        for b in self.branches:
            b.initialize(rng)

    def output_shape(self, input_shape):
        if self.input_mode == "split":
            c = input_shape[0]
            n = len(self.branches)
            if c % n:
                raise ShapeError(
                    "input channels do not divide evenly across branches",
                    expected=f"multiple of {n}",
                    actual=c,
                )
            per = (c // n,) + tuple(input_shape[1:])
            shapes = [b.output_shape(per) for b in self.branches]
        else:
            shapes = [b.output_shape(input_shape) for b in self.branches]
        ref = shapes[0][1:]
        for i, s in enumerate(shapes):
            if s[1:] != ref:
                raise ShapeError(
                    f"branch {i} output extent disagrees at the merge",
                    expected=ref,
                    actual=s[1:],
                )
        return (sum(s[0] for s in shapes),) + ref


class ResidualAdd(Layer):
    """body(x) + projection(x), with an identity projection when omitted."""

    kind = "ResidualAdd"

    def __init__(self, body, projection, in_channels, out_channels):
        super().__init__()
        if projection is None and in_channels != out_channels:
            raise ShapeError(
                "identity shortcut needs matching channel counts",
                expected=out_channels,
                actual=in_channels,
            )
        self.body = body
        self.projection = projection
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)

    def forward(self, x):
        y = self.body.forward(x)
        shortcut = x if self.projection is None else self.projection.forward(x)
        if y.shape != shortcut.shape:
            raise ShapeError(
                "residual addends differ in shape", expected=shortcut.shape, actual=y.shape
            )
        self._cache = True
        return tensor.add(y, shortcut)

    def backward(self, grad_output):
        self._need_cache()
        g_body = self.body.backward(grad_output)
        g_short = grad_output if self.projection is None else self.projection.backward(grad_output)
        return g_body + g_short

    def named_parameters(self):
        items = [(f"body.{n}", p) for n, p in self.body.named_parameters()]
        if self.projection is not None:
            items += [(f"proj.{n}", p) for n, p in self.projection.named_parameters()]
        return items

    def named_gradients(self):
        items = [(f"body.{n}", g) for n, g in self.body.named_gradients()]
        if self.projection is not None:
            items += [(f"proj.{n}", g) for n, g in self.projection.named_gradients()]
        return items

    def initialize(self, rng):
        self.body.initialize(rng)
        if self.projection is not None:
            self.projection.initialize(rng)

    def output_shape(self, input_shape):
        body_shape = self.body.output_shape(input_shape)
        short_shape = (
            tuple(input_shape)
            if self.projection is None
            else self.projection.output_shape(input_shape)
        )
        if body_shape != short_shape:
            raise ShapeError(
                "residual addends differ in shape", expected=short_shape, actual=body_shape
            )
        return body_shape


def branch_channel_split(total):
    """Deal a block's channel budget to the four branches: T/4, T/2, T/8, rest.

    32 -> (8, 16, 4, 4); 64 -> (16, 32, 8, 8). Totals below 8 leave some
    branch empty and are rejected.
    """
    b1, b3, b5 = total // 4, total // 2, total // 8
    bp = total - b1 - b3 - b5
    if min(b1, b3, b5, bp) < 1:
        raise ShapeError(
            "block channel total too small to cover four branches",
            expected=">= 8",
            actual=total,
        )
    return b1, b3, b5, bp


def inception_block(in_channels, total_channels):
    """Four-branch block: 1x1x1 / 1->3 / 1->5 / pool->1, channel-concatenated.

    Bottleneck 1x1x1 convs in the 3- and 5-kernel branches halve (at least
    one) their branch's output channel count before the spatial conv.
    """
    b1, b3, b5, bp = branch_channel_split(total_channels)
    r3 = max(1, b3 // 2)
    r5 = max(1, b5 // 2)
    branches = [
        Sequence([Conv3D(in_channels, b1, kernel=(1, 1, 1)), ReLU()]),
        Sequence([
            Conv3D(in_channels, r3, kernel=(1, 1, 1)),
            ReLU(),
            Conv3D(r3, b3, kernel=(3, 3, 3), padding="same"),
            ReLU(),
        ]),
        Sequence([
            Conv3D(in_channels, r5, kernel=(1, 1, 1)),
            ReLU(),
            Conv3D(r5, b5, kernel=(5, 5, 5), padding="same"),
            ReLU(),
        ]),
        Sequence([
            MaxPool3D(window=(3, 3, 3), stride=(1, 1, 1), padding="same"),
            Conv3D(in_channels, bp, kernel=(1, 1, 1)),
            ReLU(),
        ]),
    ]
    for branch, n in zip(branches, (b1, b3, b5, bp)):
        branch.out_channels = n
    return ConcatBranches(branches)


def inception_resnet_block(in_channels, total_channels):
    """Inception block plus a shortcut; no activation after the add, so a
    zero-parameter block is exactly the identity when the shortcut is one."""
    body = inception_block(in_channels, total_channels)
    projection = None
    if in_channels != total_channels:
        projection = Conv3D(in_channels, total_channels, kernel=(1, 1, 1))
    return ResidualAdd(body, projection, in_channels, total_channels)


class Network(Layer):
    """An ordered layer stack ending in a Sigmoid, emitting one probability
    per sample.

    ``forward`` returns a [B] probability vector. ``backward_from_logits``
    starts the reverse pass just below the closing Sigmoid, for losses whose
    gradient is naturally expressed against the logit.
    """

    kind = "Network"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)
        if not self.layers or self.layers[-1].kind != "Sigmoid":
            raise ConfigError("a Network must end with a Sigmoid output layer")
        self._logits = None

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = layer.forward(x)
        if x.ndim != 2 or x.shape[1] != 1:
            raise ShapeError(
                "network head must emit one value per sample", actual=x.shape
            )
        self._logits = x[:, 0]
        x = self.layers[-1].forward(x)
        self._cache = True
        return x[:, 0]

    @property
    def logits(self):
        """Pre-sigmoid activations from the most recent forward pass."""
        if self._logits is None:
            raise StateError("no forward pass has produced logits yet")
        return self._logits

    def backward(self, grad_probability):
        """Reverse pass from d(loss)/d(probability), shape [B]."""
        self._need_cache()
        grad = np.asarray(grad_probability, dtype=np.float64).reshape(-1, 1)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def backward_from_logits(self, grad_logit):
        """Reverse pass from d(loss)/d(logit), skipping the closing Sigmoid."""
        self._need_cache()
        grad = np.asarray(grad_logit, dtype=np.float64).reshape(-1, 1)
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        return grad

    def named_parameters(self):
        return [
            (f"{i}.{n}", p)
            for i, layer in enumerate(self.layers)
            for n, p in layer.named_parameters()
        ]

    def named_gradients(self):
        return [
            (f"{i}.{n}", g)
            for i, layer in enumerate(self.layers)
            for n, g in layer.named_gradients()
        ]

    def initialize(self, rng):
        for layer in self.layers:
            layer.initialize(rng)

    def output_shape(self, input_shape):
        for layer in self.layers:
            input_shape = layer.output_shape(input_shape)
        return tuple(input_shape)


def init_parameters(network, seed):
    """He-normal weights, zero biases, drawn from one deterministic stream.

    Layers consume the stream in registry order, so identical (structure,
    seed) pairs produce bit-identical parameters.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    network.initialize(rng)
    return network


def parameter_count(network):
    return sum(p.size for _, p in network.named_parameters())
