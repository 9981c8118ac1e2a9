"""
Differentiable operators over Tensor.

Each op validates shapes through its *_shape function (the same functions
the memory estimator uses to trace networks without allocating), computes
the output with numpy, and registers a backward rule.

Convolution and linear layers loop over the batch so that one sample's
result never depends on how many samples share the call; chunked inference
and batched training therefore agree bitwise.
"""

from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from autograd.tensor import Tensor, make_result
from utils.error_manager import DimensionError

Shape = Tuple[int, ...]

# ============================================================================
# Shape Rules
# ============================================================================

def conv2d_shape(x_shape: Shape, w_shape: Shape, stride: int = 1, padding: int = 0) -> Shape:
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {list(x_shape)} and {list(w_shape)}")
    batch, cin, height, width = x_shape
    cout, wcin, kh, kw = w_shape
    if cin != wcin:
        raise DimensionError(f"conv2d input has {cin} channels but weight expects {wcin}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}/{padding}")
    if kh > height + 2 * padding or kw > width + 2 * padding:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {height}x{width} (pad {padding})")
    return (batch, cout, (height + 2 * padding - kh) // stride + 1, (width + 2 * padding - kw) // stride + 1)

def pool_shape(x_shape: Shape, window: int) -> Shape:
    if len(x_shape) != 4:
        raise DimensionError(f"pooling expects a 4-d input, got {list(x_shape)}")
    batch, channels, height, width = x_shape
    if window < 1 or height % window or width % window:
        raise DimensionError(f"spatial dims {height}x{width} not divisible by window {window}")
    return (batch, channels, height // window, width // window)

def global_avgpool_shape(x_shape: Shape) -> Shape:
    if len(x_shape) != 4:
        raise DimensionError(f"global_avgpool expects a 4-d input, got {list(x_shape)}")
    return (x_shape[0], x_shape[1])

def linear_shape(x_shape: Shape, w_shape: Shape) -> Shape:
    if len(x_shape) != 2 or len(w_shape) != 2:
        raise DimensionError(f"linear expects [B,F] and [F,G], got {list(x_shape)} and {list(w_shape)}")
    if x_shape[1] != w_shape[0]:
        raise DimensionError(f"linear inner dimensions differ: {x_shape[1]} vs {w_shape[0]}")
    return (x_shape[0], w_shape[1])

def broadcast_shape(a_shape: Shape, b_shape: Shape) -> Shape:
    try:
        return tuple(np.broadcast_shapes(a_shape, b_shape))
    except ValueError:
        raise DimensionError(f"shapes {list(a_shape)} and {list(b_shape)} do not broadcast") from None

def concat_shape(shapes: Sequence[Shape], axis: int) -> Shape:
    if not shapes:
        raise DimensionError("concat needs at least one operand")
    rank = len(shapes[0])
    if not -rank <= axis < rank:
        raise DimensionError(f"concat axis {axis} out of range for rank {rank}")
    axis %= rank
    for shape in shapes[1:]:
        if len(shape) != rank or any(a != b for i, (a, b) in enumerate(zip(shape, shapes[0])) if i != axis):
            raise DimensionError(f"concat operands {list(shapes[0])} and {list(shape)} differ off axis {axis}")
    out = list(shapes[0])
    out[axis] = sum(shape[axis] for shape in shapes)
    return tuple(out)

def upsample_shape(x_shape: Shape, fh: int, fw: int) -> Shape:
    if len(x_shape) != 4:
        raise DimensionError(f"upsample_nearest expects a 4-d input, got {list(x_shape)}")
    if fh < 1 or fw < 1:
        raise DimensionError(f"upsample factors must be >= 1, got {fh}x{fw}")
    batch, channels, height, width = x_shape
    return (batch, channels, height * fh, width * fw)

def reshape_shape(x_shape: Shape, shape: Sequence[int]) -> Shape:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(x_shape, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
        raise DimensionError(f"cannot reshape {list(x_shape)} into {list(shape)}")
    return shape

# ============================================================================
# Convolution
# ============================================================================

def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """One sample [C,Hp,Wp] -> columns [out_h*out_w, C*kh*kw]."""
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    return windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, -1)

def _col2im_add(cols: np.ndarray, target: np.ndarray, kh: int, kw: int, stride: int,
                out_h: int, out_w: int) -> None:
    """Scatter-add columns [out_h*out_w, C*kh*kw] back into one padded sample."""
    channels = target.shape[0]
    blocks = cols.reshape(out_h, out_w, channels, kh, kw)
    for a in range(kh):
        for b in range(kw):
            target[:, a:a + stride * (out_h - 1) + 1:stride, b:b + stride * (out_w - 1) + 1:stride] += \
                blocks[:, :, :, a, b].transpose(2, 0, 1)

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation: [B,Cin,H,W] * [Cout,Cin,kh,kw] + [Cout] -> [B,Cout,H',W']."""
    out_shape = conv2d_shape(x.shape, weight.shape, stride, padding)
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv2d bias shape {list(bias.shape)} != [{weight.shape[0]}]")
    batch, cout, out_h, out_w = out_shape
    kh, kw = weight.shape[2], weight.shape[3]
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x.data, pad) if padding else x.data
    wmat = weight.data.reshape(cout, -1)

    out = np.empty(out_shape, dtype=x.data.dtype)
    for i in range(batch):
        cols = _im2col(padded[i], kh, kw, stride, out_h, out_w)
        out[i] = (cols @ wmat.T).T.reshape(cout, out_h, out_w)
    out += bias.data.reshape(1, cout, 1, 1)

    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward_fn(grad: np.ndarray):
        grad_x = np.zeros_like(padded) if need_x else None
        grad_w = np.zeros_like(wmat) if need_w else None
        for i in range(batch):
            g = grad[i].reshape(cout, out_h * out_w)
            if need_w:
                grad_w += g @ _im2col(padded[i], kh, kw, stride, out_h, out_w)
            if need_x:
                _col2im_add(g.T @ wmat, grad_x[i], kh, kw, stride, out_h, out_w)
        if need_x and padding:
            grad_x = grad_x[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]]
        return (grad_x,
                grad_w.reshape(weight.shape) if need_w else None,
                grad.sum(axis=(0, 2, 3)))

    return make_result(out, (x, weight, bias), backward_fn, "conv2d")

# ============================================================================
# Elementwise
# ============================================================================

def relu(x: Tensor) -> Tensor:
    """max(0, x); the gradient at exactly 0 is 0."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * mask,), "relu")

def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.data.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")

def _unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a trailing-aligned operand repeats along leading dims."""
    broadcast_shape(a.shape, b.shape)
    out = a.data + b.data
    return make_result(out, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")

def mul(a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    out = a.data * b.data
    return make_result(out, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                       "mul")

def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.data.dtype.type(factor)
    return make_result(out, (x,), lambda g: (g * factor,), "scale")

# ============================================================================
# Reductions and Pooling
# ============================================================================

def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")

def mean(x: Tensor) -> Tensor:
    count = x.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    return make_result(out, (x,), lambda g: (np.full(x.shape, g / count, dtype=x.data.dtype),), "mean")

def _windows(data: np.ndarray, window: int) -> np.ndarray:
    batch, channels, height, width = data.shape
    blocks = data.reshape(batch, channels, height // window, window, width // window, window)
    return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, height // window,
                                                      width // window, window * window)

def _unwindow(blocks: np.ndarray, shape: Shape, window: int) -> np.ndarray:
    batch, channels, height, width = shape
    grid = blocks.reshape(batch, channels, height // window, width // window, window, window)
    return grid.transpose(0, 1, 2, 4, 3, 5).reshape(shape)

def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Max over non-overlapping windows; ties route to the first element in scan order."""
    pool_shape(x.shape, window)
    blocks = _windows(x.data, window)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    def backward_fn(grad: np.ndarray):
        scattered = np.zeros(blocks.shape, dtype=grad.dtype)
        np.put_along_axis(scattered, argmax[..., None], grad[..., None], axis=-1)
        return (_unwindow(scattered, x.shape, window),)

    return make_result(out, (x,), backward_fn, "maxpool2d")

def avgpool2d(x: Tensor, window: int) -> Tensor:
    pool_shape(x.shape, window)
    out = _windows(x.data, window).mean(axis=-1)
    area = window * window

    def backward_fn(grad: np.ndarray):
        spread = np.repeat(grad[..., None] / area, area, axis=-1)
        return (_unwindow(spread, x.shape, window),)

    return make_result(out, (x,), backward_fn, "avgpool2d")

def global_avgpool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] spatial mean."""
    global_avgpool_shape(x.shape)
    area = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward_fn(grad: np.ndarray):
        return (np.broadcast_to(grad[:, :, None, None] / area, x.shape).copy(),)

    return make_result(out, (x,), backward_fn, "global_avgpool")

# ============================================================================
# Dense
# ============================================================================

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[B,F] @ [F,G] + [G]."""
    out_shape = linear_shape(x.shape, weight.shape)
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear bias shape {list(bias.shape)} != [{weight.shape[1]}]")
    out = np.empty(out_shape, dtype=x.data.dtype)
    for i in range(out_shape[0]):
        out[i] = x.data[i] @ weight.data
    out += bias.data

    def backward_fn(grad: np.ndarray):
        return (grad @ weight.data.T if x.requires_grad else None,
                x.data.T @ grad if weight.requires_grad else None,
                grad.sum(axis=0))

    return make_result(out, (x, weight, bias), backward_fn, "linear")

# ============================================================================
# Layout
# ============================================================================

def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out_shape = concat_shape([t.shape for t in tensors], axis)
    axis %= len(out_shape)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(grad: np.ndarray):
        return tuple(np.split(grad, bounds, axis=axis))

    return make_result(out, tuple(tensors), backward_fn, "concat")

def upsample_nearest(x: Tensor, fh: int, fw: int) -> Tensor:
    """Replicate every pixel into an fh x fw block."""
    upsample_shape(x.shape, fh, fw)
    out = np.repeat(np.repeat(x.data, fh, axis=2), fw, axis=3)
    batch, channels, height, width = x.shape

    def backward_fn(grad: np.ndarray):
        return (grad.reshape(batch, channels, height, fh, width, fw).sum(axis=(3, 5)),)

    return make_result(out, (x,), backward_fn, "upsample_nearest")

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = reshape_shape(x.shape, shape)
    out = x.data.reshape(shape).copy()
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")
