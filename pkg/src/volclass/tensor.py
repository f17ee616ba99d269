"""Dense float64 tensors and raw 3D kernels with exact analytical backward passes.

All arrays are C-ordered float64 numpy arrays. Kernels are pure functions;
single-sample entry points follow the [C, D, H, W] layout and batched
variants (used by the layer machinery) prepend a batch axis.

Convolution is cross-correlation: no kernel flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConsistencyError, ShapeError

Triple = tuple[int, int, int]


def as_tensor(values, shape=None) -> np.ndarray:
    """Validate external input into a float64 C-order array.

    Rejects non-finite values. When ``shape`` is given, flat input of the
    matching length is reshaped to it.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError("tensor extents must be positive", actual=shape)
        expected = int(np.prod(shape))
        if arr.size != expected:
            raise ShapeError(
                "data length does not match the product of the extents",
                expected=expected,
                actual=arr.size,
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite (no NaN/Inf)")
    return np.ascontiguousarray(arr)


def _triple(value, name) -> Triple:
    t = tuple(int(v) for v in value)
    if len(t) != 3:
        raise ShapeError(f"{name} must have exactly three entries", actual=value)
    return t


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 3D convolution: kernel extent, stride, symmetric zero padding."""

    kernel: Triple = (3, 3, 3)
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel, "kernel"))
        object.__setattr__(self, "stride", _triple(self.stride, "stride"))
        object.__setattr__(self, "padding", _triple(self.padding, "padding"))
        if any(k < 1 for k in self.kernel):
            raise ShapeError("kernel extents must be >= 1", actual=self.kernel)
        if any(s < 1 for s in self.stride):
            raise ShapeError("strides must be >= 1", actual=self.stride)
        if any(p < 0 for p in self.padding):
            raise ShapeError("padding must be >= 0", actual=self.padding)

    def out_extent(self, in_extent) -> Triple:
        """floor((in + 2*pad - k) / stride) + 1 per axis; rejects empty outputs."""
        out = []
        for n, k, s, p in zip(in_extent, self.kernel, self.stride, self.padding):
            span = n + 2 * p - k
            if span < 0:
                raise ShapeError(
                    "padded input smaller than kernel",
                    expected=f"axis extent >= {k - 2 * p}",
                    actual=n,
                )
            out.append(span // s + 1)
        return tuple(out)


def same_padding(kernel) -> Triple:
    """Padding that preserves spatial extent for odd kernels at stride 1."""
    return tuple(k // 2 for k in kernel)


def _check_conv_args(x, kernels, bias, spec):
    if x.ndim != 5:
        raise ShapeError("conv input must be [B, C, D, H, W]", actual=x.shape)
    if kernels.ndim != 5:
        raise ShapeError("kernels must be [C_out, C_in, kd, kh, kw]", actual=kernels.shape)
    if kernels.shape[1] != x.shape[1]:
        raise ShapeError(
            "input channel count does not match kernel C_in",
            expected=kernels.shape,
            actual=x.shape,
        )
    if tuple(kernels.shape[2:]) != spec.kernel:
        raise ShapeError(
            "kernel array extent disagrees with ConvSpec",
            expected=spec.kernel,
            actual=tuple(kernels.shape[2:]),
        )
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise ShapeError("bias must be [C_out]", expected=(kernels.shape[0],), actual=bias.shape)


def _pad_spatial(x, padding, value=0.0):
    pd, ph, pw = padding
    if pd == ph == pw == 0:
        return x
    return np.pad(
        x,
        ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)),
        mode="constant",
        constant_values=value,
    )


def conv3d_forward_batch(x, kernels, bias, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate a batch [B, C, D, H, W] with kernels [O, C, kd, kh, kw]."""
    _check_conv_args(x, kernels, bias, spec)
    spec.out_extent(x.shape[2:])
    sd, sh, sw = spec.stride
    xp = _pad_spatial(x, spec.padding)
    win = sliding_window_view(xp, spec.kernel, axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw]
    out = np.einsum("bcdhwijk,ocijk->bodhw", win, kernels, optimize=True)
    if bias is not None:
        out += bias[None, :, None, None, None]
    return out


def conv3d_forward(x, kernels, bias, spec: ConvSpec) -> np.ndarray:
    """Single-sample convolution: [C, D, H, W] -> [O, D', H', W']."""
    if x.ndim != 4:
        raise ShapeError("conv input must be [C, D, H, W]", actual=x.shape)
    return conv3d_forward_batch(x[None], kernels, bias, spec)[0]


def conv3d_backward_batch(x, kernels, spec: ConvSpec, grad_output):
    """Gradients of a scalar loss w.r.t. input, kernels, and bias.

    grad_bias[o] is the plain sum of grad_output over everything but the
    output-channel axis.
    """
    _check_conv_args(x, kernels, None, spec)
    out_extent = spec.out_extent(x.shape[2:])
    expected = (x.shape[0], kernels.shape[0]) + out_extent
    if grad_output.shape != expected:
        raise ShapeError(
            "grad_output does not match the forward output shape",
            expected=expected,
            actual=grad_output.shape,
        )
    sd, sh, sw = spec.stride
    kd, kh, kw = spec.kernel
    do, ho, wo = out_extent

    xp = _pad_spatial(x, spec.padding)
    win = sliding_window_view(xp, spec.kernel, axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw]
    grad_kernels = np.einsum("bodhw,bcdhwijk->ocijk", grad_output, win, optimize=True)
    grad_bias = grad_output.sum(axis=(0, 2, 3, 4))

    grad_xp = np.zeros_like(xp)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                # [B,O,do,ho,wo] x [O,C] -> [B,do,ho,wo,C]
                g = np.tensordot(grad_output, kernels[:, :, i, j, k], axes=([1], [0]))
                g = np.moveaxis(g, -1, 1)
                grad_xp[
                    :,
                    :,
                    i : i + sd * do : sd,
                    j : j + sh * ho : sh,
                    k : k + sw * wo : sw,
                ] += g
    pd, ph, pw = spec.padding
    d, h, w = x.shape[2:]
    grad_x = grad_xp[:, :, pd : pd + d, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(grad_x), grad_kernels, grad_bias


def conv3d_backward(x, kernels, spec: ConvSpec, grad_output):
    """Single-sample adjoint of conv3d_forward."""
    if x.ndim != 4:
        raise ShapeError("conv input must be [C, D, H, W]", actual=x.shape)
    gx, gk, gb = conv3d_backward_batch(x[None], kernels, spec, grad_output[None])
    return gx[0], gk, gb


def maxpool3d_forward_batch(x, window, stride, padding=(0, 0, 0)):
    """Max-pool a batch [B, C, D, H, W].

    Returns (output, index_map) where index_map holds, per output voxel,
    the flat index of the winning input voxel within that sample's
    [C, D, H, W] block. Ties break toward the lowest flat index. Optional
    padding is filled with -inf so padded cells never win.
    """
    window = _triple(window, "window")
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if x.ndim != 5:
        raise ShapeError("pool input must be [B, C, D, H, W]", actual=x.shape)
    if any(s < 1 for s in stride) or any(k < 1 for k in window):
        raise ShapeError("window and stride must be >= 1", actual=(window, stride))
    for n, k, p in zip(x.shape[2:], window, padding):
        if n + 2 * p < k:
            raise ShapeError(
                "pooling window larger than padded input axis",
                expected=f"axis extent >= {k - 2 * p}",
                actual=n,
            )
    b, c, d, h, w = x.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    xp = _pad_spatial(x, padding, value=-np.inf)
    win = sliding_window_view(xp, window, axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw]
    do, ho, wo = win.shape[2:5]
    flat = win.reshape(b, c, do, ho, wo, -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    oi, oj, ok = np.unravel_index(arg, window)
    di = sd * np.arange(do)[:, None, None] + oi - pd
    hj = sh * np.arange(ho)[None, :, None] + oj - ph
    wk = sw * np.arange(wo)[None, None, :] + ok - pw
    ci = np.arange(c)[None, :, None, None, None]
    index_map = ((ci * d + di) * h + hj) * w + wk
    if padding != (0, 0, 0) and (
        (di < 0).any() or (di >= d).any() or (hj < 0).any() or (hj >= h).any()
        or (wk < 0).any() or (wk >= w).any()
    ):
        raise ConsistencyError("pooling argmax landed on a padded cell")
    return np.ascontiguousarray(out), index_map.astype(np.int64)


def maxpool3d_forward(x, window, stride, padding=(0, 0, 0)):
    """Single-sample max-pool: [C, D, H, W] -> ([C, D', H', W'], index map)."""
    if x.ndim != 4:
        raise ShapeError("pool input must be [C, D, H, W]", actual=x.shape)
    out, idx = maxpool3d_forward_batch(x[None], window, stride, padding)
    return out[0], idx[0]


def maxpool3d_backward_batch(grad_output, index_map, input_shape):
    """Route upstream gradients to their argmax locations, accumulating overlaps."""
    b = grad_output.shape[0]
    per_sample = int(np.prod(input_shape))
    if grad_output.shape != index_map.shape:
        raise ShapeError(
            "grad_output and index map disagree",
            expected=index_map.shape,
            actual=grad_output.shape,
        )
    if index_map.min(initial=0) < 0 or index_map.max(initial=0) >= per_sample:
        raise ConsistencyError("pool index map points outside the input tensor")
    grad_x = np.zeros((b, per_sample))
    offsets = per_sample * np.arange(b)[:, None]
    flat_idx = (index_map.reshape(b, -1) + offsets).ravel()
    np.add.at(grad_x.ravel(), flat_idx, grad_output.reshape(-1))
    return grad_x.reshape((b,) + tuple(input_shape))


def maxpool3d_backward(grad_output, index_map, input_shape):
    """Single-sample adjoint of maxpool3d_forward."""
    return maxpool3d_backward_batch(grad_output[None], index_map[None], input_shape)[0]


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit inner-extent validation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects rank-2 tensors", actual=(a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            "inner extents do not match", expected=a.shape, actual=b.shape
        )
    return np.matmul(a, b)


def add(a, b) -> np.ndarray:
    """Pointwise sum; identical shapes required (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError("add requires identical shapes", expected=a.shape, actual=b.shape)
    return a + b


def scale(a, s: float) -> np.ndarray:
    return a * float(s)


def concat_channels(parts, axis=0) -> np.ndarray:
    """Concatenate along the channel axis; all other extents must agree."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for i, p in enumerate(parts[1:], start=1):
        other = p.shape
        if len(other) != len(ref) or (
            other[:axis] != ref[:axis] or other[axis + 1 :] != ref[axis + 1 :]
        ):
            raise ShapeError(
                f"non-channel extents differ at part {i}",
                expected=ref,
                actual=other,
            )
    return np.concatenate(parts, axis=axis)


def split_channels(grad, sizes, axis=0):
    """Adjoint of concat_channels: split a gradient back into channel blocks."""
    total = grad.shape[axis]
    if sum(sizes) != total:
        raise ShapeError(
            "channel block sizes do not sum to the gradient extent",
            expected=sum(sizes),
            actual=total,
        )
    cuts = np.cumsum(sizes[:-1])
    return np.split(grad, cuts, axis=axis)
