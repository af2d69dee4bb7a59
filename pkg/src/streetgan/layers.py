"""Layers and losses with hand-derived backward passes.

Every layer is a small class with ``forward(x, train)`` / ``backward(dout)``
and a ``params()`` listing of its learnable tensors.  Convolution follows
the deep-learning convention (cross-correlation, zero padding, no kernel
flip) and is implemented as an im2col/col2im pair so both directions reduce
to one batched matrix product.  ``grad_check`` verifies any layer or
composite against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import DTYPE

BCE_EPS = 1e-7          # clamp for saturated sigmoid outputs
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Param:
    """A learnable tensor with its gradient accumulator."""

    __slots__ = ("value", "grad", "state")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.state = None  # optimizer slot, attached by optim.Adam

    def zero_grad(self):
        self.grad[...] = 0.0


class Layer:
    """Base layer. Subclasses cache whatever forward state backward needs."""

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[tuple[str, Param]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


def glorot_init(fan_in: int, fan_out: int, rng: Rng, shape=None) -> np.ndarray:
    """Uniform init in [-L, L], L = sqrt(6 / (fan_in + fan_out)).

    For conv kernels the fan counts include the receptive-field size.
    ``shape`` defaults to (fan_in, fan_out).
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"glorot fans must be >= 1, got ({fan_in}, {fan_out})")
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


# -- im2col / col2im -------------------------------------------------------

def _out_extent(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            ph: int, pw: int) -> np.ndarray:
    """Gather sliding windows: (N,C,H,W) -> (N,C,kh,kw,OH,OW)."""
    n, c, h, w = x.shape
    oh, ow = _out_extent(h, kh, sh, ph), _out_extent(w, kw, sw, pw)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx] = x[:, :, ky:ky + sh * oh:sh, kx:kx + sw * ow:sw]
    return cols


def _col2im(cols: np.ndarray, h: int, w: int, sh: int, sw: int,
            ph: int, pw: int) -> np.ndarray:
    """Scatter-add window gradients back: inverse layout of _im2col."""
    n, c, kh, kw, oh, ow = cols.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for ky in range(kh):
        for kx in range(kw):
            out[:, :, ky:ky + sh * oh:sh, kx:kx + sw * ow:sw] += cols[:, :, ky, kx]
    if ph or pw:
        out = out[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(out)


class Conv2d(Layer):
    """Stride/pad cross-correlation. Weight shape (out_ch, in_ch, kh, kw)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        if kernel < 1 or stride < 1 or padding < 0:
            raise ValueError("kernel/stride must be >= 1 and padding >= 0")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        fan_out = out_ch * kernel * kernel
        self.w = Param(glorot_init(fan_in, fan_out, rng,
                                   shape=(out_ch, in_ch, kernel, kernel)))
        self.b = Param(np.zeros(out_ch, dtype=DTYPE)) if bias else None
        self._cols = None
        self._xshape = None

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return _out_extent(h, k, s, p), _out_extent(w, k, s, p)

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv2d expects {self.in_ch} channels, got {c}")
        oh, ow = self.out_shape(h, w)
        if oh < 1 or ow < 1:
            raise ValueError(
                f"conv2d geometry {h}x{w} with kernel {self.kernel} stride "
                f"{self.stride} pad {self.padding} gives output {oh}x{ow}")
        k = self.kernel
        cols = _im2col(x, k, k, self.stride, self.stride,
                       self.padding, self.padding)
        self._cols = cols.reshape(n, self.in_ch * k * k, oh * ow)
        self._xshape = x.shape
        w2 = self.w.value.reshape(self.out_ch, -1)
        y = np.matmul(w2, self._cols).reshape(n, self.out_ch, oh, ow)
        if self.b is not None:
            y += self.b.value[None, :, None, None]
        return y

    def backward(self, dout):
        n, f, oh, ow = dout.shape
        k = self.kernel
        kk = self.in_ch * k * k
        d2 = np.ascontiguousarray(dout, dtype=DTYPE).reshape(n, f, oh * ow)
        # dW as one flat gemm: (F, N*P) @ (N*P, C*k*k)
        dw = d2.transpose(1, 0, 2).reshape(f, -1) @ \
            self._cols.transpose(0, 2, 1).reshape(-1, kk)
        self.w.grad += dw.reshape(self.w.value.shape)
        if self.b is not None:
            self.b.grad += d2.sum(axis=(0, 2))
        w2 = self.w.value.reshape(f, kk)
        dcols = np.matmul(w2.T, d2).reshape(n, self.in_ch, k, k, oh, ow)
        _, _, h, w = self._xshape
        return _col2im(dcols, h, w, self.stride, self.stride,
                       self.padding, self.padding)

    def params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class ConvTranspose2d(Layer):
    """Transposed convolution: the adjoint of Conv2d's forward map.

    Weight shape (in_ch, out_ch, kh, kw); output extent
    (H-1)*stride - 2*padding + kernel.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        if kernel < 1 or stride < 1 or padding < 0:
            raise ValueError("kernel/stride must be >= 1 and padding >= 0")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        fan_out = out_ch * kernel * kernel
        self.w = Param(glorot_init(fan_in, fan_out, rng,
                                   shape=(in_ch, out_ch, kernel, kernel)))
        self.b = Param(np.zeros(out_ch, dtype=DTYPE)) if bias else None
        self._x2 = None
        self._xshape = None

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv_transpose2d expects {self.in_ch} channels, got {c}")
        oh, ow = self.out_shape(h, w)
        if oh < 1 or ow < 1:
            raise ValueError(
                f"conv_transpose2d geometry {h}x{w} with kernel {self.kernel} "
                f"stride {self.stride} pad {self.padding} gives output {oh}x{ow}")
        k = self.kernel
        self._x2 = x.reshape(n, c, h * w)
        self._xshape = x.shape
        w2 = self.w.value.reshape(c, -1)           # (C, F*k*k)
        cols = np.matmul(w2.T, self._x2)           # (N, F*k*k, H*W)
        cols = cols.reshape(n, self.out_ch, k, k, h, w)
        y = _col2im(cols, oh, ow, self.stride, self.stride,
                    self.padding, self.padding)
        if self.b is not None:
            y += self.b.value[None, :, None, None]
        return y

    def backward(self, dout):
        n, c, h, w = self._xshape
        k = self.kernel
        cols_d = _im2col(np.ascontiguousarray(dout, dtype=DTYPE), k, k,
                         self.stride, self.stride, self.padding, self.padding)
        fkk = self.out_ch * k * k
        cols_d = cols_d.reshape(n, fkk, h * w)
        dw = self._x2.transpose(1, 0, 2).reshape(c, -1) @ \
            cols_d.transpose(0, 2, 1).reshape(-1, fkk)
        self.w.grad += dw.reshape(self.w.value.shape)
        if self.b is not None:
            self.b.grad += dout.sum(axis=(0, 2, 3))
        w2 = self.w.value.reshape(c, fkk)
        dx = np.matmul(w2, cols_d)                 # (N, C, H*W)
        return np.ascontiguousarray(dx.reshape(self._xshape))

    def params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class Dense(Layer):
    """Affine map on (N, in) batches. Weight shape (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: Rng,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_features, out_features), dtype=DTYPE)
        else:
            w = glorot_init(in_features, out_features, rng)
        self.w = Param(w)
        self.b = Param(np.zeros(out_features, dtype=DTYPE))
        self._x = None

    def forward(self, x, train=True):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dout):
        self.w.grad += self._x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.w.value.T

    def params(self):
        return [("w", self.w), ("b", self.b)]


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Reshape(Layer):
    """Reshape each sample to a fixed per-sample shape."""

    def __init__(self, sample_shape: tuple[int, ...]):
        self.sample_shape = tuple(sample_shape)
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.sample_shape)

    def backward(self, dout):
        return dout.reshape(self._shape)


class GlobalAvgPool(Layer):
    """(N,C,H,W) -> (N,C) mean over the spatial extents."""

    def __init__(self):
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w),
                               self._shape).astype(DTYPE).copy()


class Activation(Layer):
    """Elementwise nonlinearity: relu | leaky_relu | tanh | sigmoid."""

    KINDS = ("relu", "leaky_relu", "tanh", "sigmoid")

    def __init__(self, kind: str, slope: float = 0.2):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        if kind == "leaky_relu" and not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0,1), got {slope}")
        self.kind = kind
        self.slope = slope
        self._cache = None

    def forward(self, x, train=True):
        if self.kind == "relu":
            out = np.maximum(x, 0.0)
            self._cache = x > 0
        elif self.kind == "leaky_relu":
            out = np.where(x > 0, x, self.slope * x).astype(DTYPE)
            self._cache = x > 0
        elif self.kind == "tanh":
            out = np.tanh(x)
            self._cache = out
        else:  # sigmoid
            out = 1.0 / (1.0 + np.exp(-x.astype(np.float64)))
            out = out.astype(DTYPE)
            self._cache = out
        return out

    def backward(self, dout):
        if self.kind == "relu":
            return (dout * self._cache).astype(DTYPE)
        if self.kind == "leaky_relu":
            return (dout * np.where(self._cache, 1.0, self.slope)).astype(DTYPE)
        if self.kind == "tanh":
            return (dout * (1.0 - self._cache ** 2)).astype(DTYPE)
        return (dout * self._cache * (1.0 - self._cache)).astype(DTYPE)


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N,H,W).

    Train mode requires N >= 2 and updates running statistics with the
    configured momentum; eval mode normalizes with the stored running
    statistics and never mutates them.
    """

    def __init__(self, channels: int, eps: float = BN_EPS,
                 momentum: float = BN_MOMENTUM):
        if eps <= 0:
            raise ValueError("eps must be > 0")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(np.ones(channels, dtype=DTYPE))
        self.beta = Param(np.zeros(channels, dtype=DTYPE))
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self._cache = None

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"batch norm expects {self.channels} channels, got {c}")
        if train:
            if n < 2:
                raise ValueError("batch norm in train mode requires batch size >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            invstd = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(DTYPE)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var).astype(DTYPE)
            self._cache = ("train", xhat, invstd)
        else:
            invstd = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) \
                * invstd[None, :, None, None]
            self._cache = ("eval", xhat, invstd)
        return (self.gamma.value[None, :, None, None] * xhat
                + self.beta.value[None, :, None, None]).astype(DTYPE)

    def backward(self, dout):
        mode, xhat, invstd = self._cache
        self.beta.grad += dout.sum(axis=(0, 2, 3))
        self.gamma.grad += (dout * xhat).sum(axis=(0, 2, 3))
        g = self.gamma.value[None, :, None, None]
        if mode == "eval":
            return (dout * g * invstd[None, :, None, None]).astype(DTYPE)
        n, c, h, w = dout.shape
        m = n * h * w
        dxhat = dout * g
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (invstd[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
        return dx.astype(DTYPE)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]

    def load_buffers(self, values: dict):
        self.running_mean = np.asarray(values["running_mean"], dtype=DTYPE).copy()
        self.running_var = np.asarray(values["running_var"], dtype=DTYPE).copy()


class InstanceNorm2d(Layer):
    """Per-(sample, channel) normalization over (H,W).

    Uses instance statistics in both train and eval mode, the usual
    convention for translation generators; nothing is accumulated.
    """

    def __init__(self, channels: int, eps: float = BN_EPS):
        if eps <= 0:
            raise ValueError("eps must be > 0")
        self.channels = channels
        self.eps = eps
        self.gamma = Param(np.ones(channels, dtype=DTYPE))
        self.beta = Param(np.zeros(channels, dtype=DTYPE))
        self._cache = None

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"instance norm expects {self.channels} channels, got {c}")
        if h * w < 2:
            raise ValueError("instance norm requires spatial size >= 2")
        mean = x.mean(axis=(2, 3), keepdims=True)
        var = x.var(axis=(2, 3), keepdims=True)
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * invstd
        self._cache = (xhat, invstd)
        return (self.gamma.value[None, :, None, None] * xhat
                + self.beta.value[None, :, None, None]).astype(DTYPE)

    def backward(self, dout):
        xhat, invstd = self._cache
        n, c, h, w = dout.shape
        m = h * w
        self.beta.grad += dout.sum(axis=(0, 2, 3))
        self.gamma.grad += (dout * xhat).sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma.value[None, :, None, None]
        s1 = dxhat.sum(axis=(2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
        dx = (invstd / m) * (m * dxhat - s1 - xhat * s2)
        return dx.astype(DTYPE)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


# -- losses ---------------------------------------------------------------

def bce(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy, mean over all elements.

    Predictions at exactly 0 or 1 are clamped to [BCE_EPS, 1-BCE_EPS]; the
    gradient is computed at the clamped value so saturated discriminators
    keep a finite training signal.
    """
    if pred.shape != target.shape:
        raise ValueError(f"bce shapes differ: {pred.shape} vs {target.shape}")
    p = np.clip(pred.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    t = target.astype(np.float64)
    loss = float(-(t * np.log(p) + (1 - t) * np.log1p(-p)).mean())
    grad = ((p - t) / (p * (1 - p)) / pred.size).astype(DTYPE)
    return loss, grad


def least_squares(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"least_squares shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float((diff ** 2).mean())
    grad = (2.0 * diff / pred.size).astype(DTYPE)
    return loss, grad


def l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error; subgradient 0 at ties."""
    if pred.shape != target.shape:
        raise ValueError(f"l1 shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.abs(diff).mean())
    grad = (np.sign(diff) / pred.size).astype(DTYPE)
    return loss, grad


def softmax_cross_entropy(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy on pre-activation logits, mean over the batch.

    ``target`` is either an (N,) integer class vector or an (N,K) one-hot.
    """
    n, k = logits.shape
    if target.ndim == 1:
        if target.shape[0] != n:
            raise ValueError(f"target length {target.shape[0]} != batch {n}")
        onehot = np.zeros((n, k), dtype=np.float64)
        onehot[np.arange(n), target.astype(int)] = 1.0
    else:
        if target.shape != logits.shape:
            raise ValueError(f"one-hot shape {target.shape} != logits {logits.shape}")
        onehot = target.astype(np.float64)
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(onehot * logp).sum() / n)
    grad = ((np.exp(logp) - onehot) / n).astype(DTYPE)
    return loss, grad


LOSSES = {
    "bce": bce,
    "least_squares": least_squares,
    "l1": l1,
    "softmax_cross_entropy": softmax_cross_entropy,
}


# -- gradient checking ------------------------------------------------------

def zero_grads(module) -> None:
    for _, p in module.params():
        p.zero_grad()


def _projected(y: np.ndarray, r: np.ndarray) -> float:
    return float((y.astype(np.float64) * r).sum())


def grad_check(module, x: np.ndarray, rng: Rng, eps: float = 1e-3,
               max_coords: int = 200) -> float:
    """Max relative error of ``module.backward`` vs central differences.

    The scalar objective is sum(forward(x) * R) for a random sign tensor R.
    Every coordinate of the input and of each parameter is probed, or a
    random subset of ``max_coords`` for large tensors.  Relative error is
    |a - b| / max(1, |a|, |b|).
    """
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must be in [1e-4, 1e-2], got {eps}")
    y = module.forward(x, train=True)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite forward value in grad_check")
    r = np.where(rng.uniform(size=y.shape) < 0.5, -1.0, 1.0).astype(DTYPE)
    zero_grads(module)
    dx = module.backward(r)

    tensors = [(x, dx)] + [(p.value, p.grad) for _, p in module.params()]
    worst = 0.0
    for value, grad in tensors:
        size = value.size
        if size > max_coords:
            coords = rng.choice(size, max_coords, replace=False)
        else:
            coords = np.arange(size)
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            sp = _projected(module.forward(x, train=True), r)
            flat[i] = orig - eps
            sm = _projected(module.forward(x, train=True), r)
            flat[i] = orig
            numeric = (sp - sm) / (2 * eps)
            analytic = float(gflat[i])
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
