"""Fixed-shape tensor kernels with hand-derived backward passes.

This module is the numeric substrate of the auto-encoder: 3x3 "same"
convolution, ReLU, 2x2 max-pooling, nearest-neighbour 2x upsampling, the
pixel-wise MSE loss and the Adam update. Everything is plain numpy; the
convolutions are lowered to matrix products over a (dy, dx, channel)
column block so BLAS does the arithmetic.

Performance notes (these kernels dominate training time, and the machines
this runs on are often memory-bandwidth starved):
  * the column matrix is never materialized in full; a small reusable
    block (a few MB, from a thread-local pool) is filled and multiplied
    per row-band, so column traffic stays in cache;
  * zero padding is virtual: the fill clamps row/column ranges and zeroes
    the out-of-range strips instead of building padded copies;
  * bias addition and the bias gradient ride along with the per-block
    GEMMs instead of taking separate full passes.

Conventions:
  * a single sample is an (H, W, C) float array, row-major;
  * batched variants take (N, H, W, C);
  * all functions are pure in their visible effects -- inputs are never
    mutated and Adam returns a fresh state.

Backward-pass formulas (out-of-bounds input treated as zero):

  forward      out[y,x,o]   = b[o] + sum_{dy,dx,i} in[y+dy-1, x+dx-1, i] * w[dy,dx,i,o]
  bias grad    db[o]        = sum_{y,x} g[y,x,o]
  weight grad  dw[dy,dx,i,o]= sum_{y,x} in[y+dy-1, x+dx-1, i] * g[y,x,o]
  input grad   din          = conv(g, wT)  with  wT[dy,dx,o,i] = w[2-dy, 2-dx, i, o]
"""

import threading
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ShapeError
from .validation import as_float_array, check_tensor3

# target size of the per-band column block; small enough to stay in cache
_BLOCK_BYTES = 3 * 2**20
_POOL_CAP_BYTES = 256 * 2**20

_tls = threading.local()


def _scratch(shape, dtype):
    """Reusable per-thread buffer; contents are undefined until overwritten."""
    pool = getattr(_tls, "pool", None)
    if pool is None:
        pool = _tls.pool = {}
    key = (shape, np.dtype(dtype).str)
    buf = pool.get(key)
    if buf is None:
        if sum(b.nbytes for b in pool.values()) > _POOL_CAP_BYTES:
            pool.clear()
        buf = np.empty(shape, dtype=dtype)
        pool[key] = buf
    return buf


@dataclass
class ConvKernel:
    """3x3 convolution weights of shape (3, 3, cin, cout) plus a bias (cout,).

    Also used as the container for weight/bias gradients, which share the
    same shapes.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = as_float_array(self.weights, name="weights")
        self.bias = as_float_array(self.bias, name="bias")
        if self.weights.ndim != 4 or self.weights.shape[:2] != (3, 3):
            raise ShapeError(
                f"kernel weights must be (3, 3, cin, cout), got {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(
                f"bias must have length cout={self.weights.shape[3]}, got {self.bias.shape}"
            )

    @property
    def cin(self):
        return self.weights.shape[2]

    @property
    def cout(self):
        return self.weights.shape[3]


def _band_rows(h, w, c, itemsize):
    rows = _BLOCK_BYTES // max(1, w * 9 * c * itemsize)
    return max(1, min(h, rows))


def _band_samples(h, w, c, itemsize):
    """How many whole samples fit one column block (0 if none)."""
    return _BLOCK_BYTES // max(1, h * w * 9 * c * itemsize)


def _assign_shifted(dst, src_rows, dx, w):
    """Write a dx-shifted copy of source rows, zeroing the off-frame column."""
    if dx == 0:
        dst[..., 0, :] = 0
        dst[..., 1:, :] = src_rows[..., :w - 1, :]
    elif dx == 2:
        dst[..., w - 1, :] = 0
        dst[..., :w - 1, :] = src_rows[..., 1:, :]
    else:
        dst[...] = src_rows


def _fill_band(col6, x, s, y0, yb):
    """Column block for sample s, output rows [y0, y0+yb).

    col6 is a (yb, w, 3, 3, c) view; out-of-frame taps are zeroed, which
    realizes the "same" zero padding without padded copies.
    """
    h, w = x.shape[1], x.shape[2]
    for dy in range(3):
        sy0 = y0 + dy - 1  # source row for block row 0
        lo = max(0, -sy0)
        hi = min(yb, h - sy0)
        for dx in range(3):
            dst = col6[:, :, dy, dx, :]
            if lo > 0:
                dst[:lo] = 0
            if hi < yb:
                dst[hi:] = 0
            if lo < hi:
                _assign_shifted(dst[lo:hi], x[s, sy0 + lo:sy0 + hi], dx, w)


def _fill_samples(col6, x, s0, s1):
    """Column block for whole samples [s0, s1); col6 is (s1-s0, h, w, 3, 3, c)."""
    h, w = x.shape[1], x.shape[2]
    src = x[s0:s1]
    for dy in range(3):
        lo = max(0, 1 - dy)  # first valid output row for this tap
        hi = min(h, h + 1 - dy)
        for dx in range(3):
            dst = col6[:, :, :, dy, dx, :]
            if lo > 0:
                dst[:, :lo] = 0
            if hi < h:
                dst[:, hi:] = 0
            _assign_shifted(dst[:, lo:hi], src[:, lo + dy - 1:hi + dy - 1], dx, w)


def _check_conv_input(x, kernel, name="input"):
    x = as_float_array(x, name=name)
    if x.ndim != 4:
        raise ShapeError(f"batched {name} must be (n, h, w, c), got {x.shape}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError(f"{name} needs positive spatial dims, got {x.shape}")
    if x.shape[3] != kernel.cin:
        raise ShapeError(
            f"{name} has {x.shape[3]} channels, kernel expects {kernel.cin}"
        )
    return x


def conv2d_forward_batch(x, kernel):
    """Same-padded 3x3 convolution of an (N, H, W, cin) batch."""
    x = _check_conv_input(x, kernel)
    n, h, w, c = x.shape
    co = kernel.cout
    w2 = kernel.weights.reshape(9 * c, co).astype(x.dtype, copy=False)
    bias = kernel.bias.astype(x.dtype, copy=False)
    out = np.empty((n, h, w, co), dtype=x.dtype)
    group = min(n, _band_samples(h, w, c, x.dtype.itemsize))
    if group >= 1:
        col = _scratch((group * h * w, 9 * c), x.dtype)
        col6 = col.reshape(group, h, w, 3, 3, c)
        for s0 in range(0, n, group):
            s1 = min(n, s0 + group)
            _fill_samples(col6[:s1 - s0], x, s0, s1)
            ov = out[s0:s1].reshape((s1 - s0) * h * w, co)
            np.matmul(col[:(s1 - s0) * h * w], w2, out=ov)
            ov += bias
    else:
        band = _band_rows(h, w, c, x.dtype.itemsize)
        col = _scratch((band * w, 9 * c), x.dtype)
        col6 = col.reshape(band, w, 3, 3, c)
        for s in range(n):
            for y0 in range(0, h, band):
                yb = min(band, h - y0)
                _fill_band(col6[:yb], x, s, y0, yb)
                ov = out[s, y0:y0 + yb].reshape(yb * w, co)
                np.matmul(col[:yb * w], w2, out=ov)
                ov += bias
    return out


def conv2d_backward_batch(x, kernel, grad_out, need_input_grad=True):
    """Gradients of conv2d_forward_batch.

    Returns (grad_input, ConvKernel gradients); grad_input is None when
    need_input_grad=False (used for the outermost layer).
    """
    x = _check_conv_input(x, kernel)
    grad_out = as_float_array(grad_out, name="grad_out")
    n, h, w, c = x.shape
    co = kernel.cout
    if grad_out.shape != (n, h, w, co):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match output {(n, h, w, co)}"
        )
    dtype = x.dtype
    g = grad_out.astype(dtype, copy=False)

    grad_w2 = np.zeros((9 * c, co), dtype=dtype)
    grad_b = np.zeros(co, dtype=dtype)
    tmp = _scratch((9 * c, co), dtype)
    group = min(n, _band_samples(h, w, c, dtype.itemsize))
    if group >= 1:
        col = _scratch((group * h * w, 9 * c), dtype)
        col6 = col.reshape(group, h, w, 3, 3, c)
        for s0 in range(0, n, group):
            s1 = min(n, s0 + group)
            _fill_samples(col6[:s1 - s0], x, s0, s1)
            gv = g[s0:s1].reshape((s1 - s0) * h * w, co)
            np.matmul(col[:(s1 - s0) * h * w].T, gv, out=tmp)
            grad_w2 += tmp
            grad_b += gv.sum(axis=0)
    else:
        band = _band_rows(h, w, c, dtype.itemsize)
        col = _scratch((band * w, 9 * c), dtype)
        col6 = col.reshape(band, w, 3, 3, c)
        for s in range(n):
            for y0 in range(0, h, band):
                yb = min(band, h - y0)
                _fill_band(col6[:yb], x, s, y0, yb)
                gv = g[s, y0:y0 + yb].reshape(yb * w, co)
                np.matmul(col[:yb * w].T, gv, out=tmp)
                grad_w2 += tmp
                grad_b += gv.sum(axis=0)
    grad_w = grad_w2.reshape(3, 3, c, co)

    grad_x = None
    if need_input_grad:
        # input gradient = convolution of grad_out with the flipped,
        # transposed kernel
        wt = np.ascontiguousarray(
            kernel.weights[::-1, ::-1].transpose(0, 1, 3, 2), dtype=dtype
        )
        grad_x = conv2d_forward_batch(g, ConvKernel(wt, np.zeros(c, dtype=dtype)))

    return grad_x, ConvKernel(grad_w, grad_b)


def conv2d_forward(x, kernel):
    """Same-padded 3x3 convolution of a single (H, W, cin) tensor."""
    x = check_tensor3(x)
    return conv2d_forward_batch(x[None], kernel)[0]


def conv2d_backward(x, kernel, grad_out):
    """Per-sample gradients: returns (grad_input, ConvKernel gradient)."""
    x = check_tensor3(x)
    grad_out = check_tensor3(grad_out, name="grad_out")
    grad_x, grad_k = conv2d_backward_batch(x[None], kernel, grad_out[None])
    return grad_x[0], grad_k


def relu(x):
    """Elementwise max(0, x); returns (output, backward).

    backward passes gradient where the input was strictly positive.
    """
    x = as_float_array(x, name="input")
    mask = x > 0

    def backward(grad_out):
        grad_out = as_float_array(grad_out, dtype=x.dtype, name="grad_out")
        if grad_out.shape != x.shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} != input {x.shape}")
        return np.where(mask, grad_out, 0)

    return np.where(mask, x, 0), backward


def maxpool2x2_batch(x):
    """2x2 max pooling, stride 2, over (N, H, W, C); returns (out, backward).

    Gradient routes to the first maximum of each window in row-major scan
    order; the comparisons below claim positions in exactly that order.
    """
    x = as_float_array(x, name="input")
    if x.ndim != 4:
        raise ShapeError(f"batched input must be (n, h, w, c), got {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    quads = (
        x[:, 0::2, 0::2],
        x[:, 0::2, 1::2],
        x[:, 1::2, 0::2],
        x[:, 1::2, 1::2],
    )
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

    def backward(grad_out):
        grad_out = as_float_array(grad_out, dtype=x.dtype, name="grad_out")
        if grad_out.shape != out.shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} != output {out.shape}")
        grad_in = np.empty((n, h, w, c), dtype=x.dtype)
        views = (
            grad_in[:, 0::2, 0::2],
            grad_in[:, 0::2, 1::2],
            grad_in[:, 1::2, 0::2],
            grad_in[:, 1::2, 1::2],
        )
        claimed = np.zeros(out.shape, dtype=bool)
        for quad, view in zip(quads, views):
            winner = (quad == out) & ~claimed
            np.multiply(grad_out, winner, out=view)
            claimed |= winner
        return grad_in

    return out, backward


def maxpool2x2(x):
    """2x2 max pooling of a single (H, W, C) tensor; returns (out, backward)."""
    x = check_tensor3(x)
    out, bwd = maxpool2x2_batch(x[None])
    return out[0], lambda g: bwd(as_float_array(g, name="grad_out")[None])[0]


def upsample_nearest2x_batch(x):
    """Nearest-neighbour 2x upsampling over (N, H, W, C); returns (out, backward)."""
    x = as_float_array(x, name="input")
    if x.ndim != 4:
        raise ShapeError(f"batched input must be (n, h, w, c), got {x.shape}")
    n, h, w, c = x.shape
    out = np.empty((n, 2 * h, 2 * w, c), dtype=x.dtype)
    out[:, 0::2, 0::2] = x
    out[:, 0::2, 1::2] = x
    out[:, 1::2, 0::2] = x
    out[:, 1::2, 1::2] = x

    def backward(grad_out):
        grad_out = as_float_array(grad_out, dtype=x.dtype, name="grad_out")
        if grad_out.shape != (n, 2 * h, 2 * w, c):
            raise ShapeError(
                f"grad_out shape {grad_out.shape} != output {(n, 2 * h, 2 * w, c)}"
            )
        acc = grad_out[:, 0::2, 0::2] + grad_out[:, 0::2, 1::2]
        acc += grad_out[:, 1::2, 0::2]
        acc += grad_out[:, 1::2, 1::2]
        return acc

    return out, backward


def upsample_nearest2x(x):
    """Nearest-neighbour 2x upsampling of a single (H, W, C) tensor."""
    x = check_tensor3(x)
    out, bwd = upsample_nearest2x_batch(x[None])
    return out[0], lambda g: bwd(as_float_array(g, name="grad_out")[None])[0]


def mse_loss(reconstruction, target):
    """Pixel-wise mean squared error over an h x w single-channel image.

    loss = (1 / (h*w)) * sum((target - reconstruction)^2)
    Returns (loss, d loss / d reconstruction).
    """
    rec = as_float_array(reconstruction, name="reconstruction")
    tgt = as_float_array(target, dtype=rec.dtype, name="target")
    if rec.shape != tgt.shape:
        raise ShapeError(f"shape mismatch: {rec.shape} vs {tgt.shape}")
    if rec.ndim == 3 and rec.shape[2] != 1:
        raise ShapeError(f"loss is defined on single-channel images, got {rec.shape}")
    if rec.ndim not in (2, 3):
        raise ShapeError(f"expected an image, got shape {rec.shape}")
    h, w = rec.shape[:2]
    diff = rec - tgt
    loss = float(np.dot(diff.ravel(), diff.ravel()) / (h * w))
    grad = (2.0 / (h * w)) * diff
    return loss, grad


@dataclass
class AdamState:
    """First/second moment estimates for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        p = np.asarray(params)
        return cls(
            m=np.zeros_like(p, dtype=p.dtype),
            v=np.zeros_like(p, dtype=p.dtype),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_update(params, grads, state, lr):
    """One bias-corrected Adam step; returns (new_params, new_state)."""
    p = as_float_array(params, name="params")
    g = as_float_array(grads, dtype=p.dtype, name="grads")
    if p.shape != g.shape or p.shape != state.m.shape or p.shape != state.v.shape:
        raise ShapeError(
            f"params {p.shape}, grads {g.shape} and state {state.m.shape} must agree"
        )
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_p = p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_p, replace(state, m=m, v=v, step_count=t)
