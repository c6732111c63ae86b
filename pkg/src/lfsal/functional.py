"""Forward/backward numpy kernels for the layer set used by the networks.

All kernels take channels-first batches ``(N, C, H, W)``. Each forward returns
``(output, cache)`` and the matching backward consumes that cache.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .lightfield import linear_resize_matrix

ACTIVATIONS = ("relu", "sigmoid", "none")


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    padding_mode: str = "same"
    activation: str = "relu"
    dilation: int = 1

    def __post_init__(self):
        if min(self.out_channels, self.kernel_h, self.kernel_w, self.stride_h, self.stride_w, self.dilation) < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding_mode not in ("valid", "same"):
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def output_size(self, H: int, W: int) -> tuple[int, int]:
        pt, pb, pl, pr = self.padding(H, W)
        Ho = (H + pt + pb - self.dilation * (self.kernel_h - 1) - 1) // self.stride_h + 1
        Wo = (W + pl + pr - self.dilation * (self.kernel_w - 1) - 1) // self.stride_w + 1
        return Ho, Wo

    def padding(self, H: int, W: int) -> tuple[int, int, int, int]:
        if self.padding_mode == "valid":
            return 0, 0, 0, 0
        ph = _same_pad(H, self.kernel_h, self.stride_h, self.dilation)
        pw = _same_pad(W, self.kernel_w, self.stride_w, self.dilation)
        return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2

    def weight_shape(self, in_channels: int) -> tuple[int, int, int, int]:
        return self.out_channels, in_channels, self.kernel_h, self.kernel_w


def _same_pad(n, k, s, d):
    out = -(-n // s)
    return max((out - 1) * s + d * (k - 1) + 1 - n, 0)


# convs whose patch matrix fits under this size use one GEMM; larger ones loop over kernel taps
IM2COL_MAX_BYTES = 256 * 2**20

# multiply-accumulate instrumentation used by the benchmark
_mac_counter: list[int] | None = None


@contextmanager
def count_macs():
    """Count conv multiply-accumulates issued inside the block.

    Yields a one-element list whose entry holds the running total.
    """
    global _mac_counter
    prev, _mac_counter = _mac_counter, [0]
    try:
        yield _mac_counter
    finally:
        _mac_counter = prev


# activation-pattern recorder used by the gradient checker to spot kinks
_patterns: list | None = None


@contextmanager
def record_patterns():
    """Collect ReLU on/off masks and max-pool winners of every op in the block."""
    global _patterns
    prev, _patterns = _patterns, []
    try:
        yield _patterns
    finally:
        _patterns = prev


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values produced by {what}")
    return x


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise DimensionError(f"expected (C, H, W) or (N, C, H, W), got shape {x.shape}")
    return x, False


def sigmoid(x):
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    if _patterns is not None:
        _patterns.append(x > 0)
    return np.maximum(x, 0)


def activation_forward(z, kind):
    if kind == "relu":
        return relu(z)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def activation_backward(grad, out, kind):
    """Gradient w.r.t. the pre-activation given the activation output."""
    if kind == "relu":
        return grad * (out > 0)
    if kind == "sigmoid":
        return grad * out * (1 - out)
    return grad


def conv2d_forward(x, spec: ConvLayerSpec, weights, bias=None):
    x, squeeze = _as_batch(x)
    N, C, H, W = x.shape
    if weights.shape != spec.weight_shape(C):
        raise DimensionError(f"weights {weights.shape} do not match spec {spec.weight_shape(C)} for input {x.shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise DimensionError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    Ho, Wo = spec.output_size(H, W)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"input {H}x{W} too small for kernel {spec.kernel_h}x{spec.kernel_w}")
    pads = spec.padding(H, W)
    kh, kw, sh, sw, d = spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, spec.dilation

    if _mac_counter is not None:
        _mac_counter[0] += N * spec.out_channels * C * kh * kw * Ho * Wo

    tiled = spec.padding_mode == "valid" and (sh, sw) == (kh, kw) and d == 1
    cols = None
    if tiled:
        # non-overlapping windows: a reshape replaces im2col
        xr = x[:, :, :Ho * kh, :Wo * kw].reshape(N, C, Ho, kh, Wo, kw)
        z = np.tensordot(xr, weights, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        xp = x
    else:
        xp = _pad(x, pads)
        if N * Ho * Wo * C * kh * kw * xp.itemsize <= IM2COL_MAX_BYTES:
            cols = _im2col(xp, kh, kw, Ho, Wo, sh, sw, d)
            w2 = weights.transpose(0, 2, 3, 1).reshape(spec.out_channels, -1)
            z = (w2 @ cols).reshape(spec.out_channels, N, Ho, Wo).transpose(1, 0, 2, 3)
        else:
            # one strided window per kernel tap keeps memory at one activation
            z = np.zeros((spec.out_channels, N, Ho, Wo), dtype=np.result_type(x, weights))
            for i in range(kh):
                for j in range(kw):
                    xs = _window(xp, i * d, j * d, Ho, Wo, sh, sw)
                    z += np.tensordot(weights[:, :, i, j], xs, axes=([1], [1]))
            z = z.transpose(1, 0, 2, 3)
    if bias is not None:
        z = z + bias[None, :, None, None]
    out = np.ascontiguousarray(activation_forward(z, spec.activation))
    check_finite(out, "conv2d_forward")
    cache = (xp, x.shape, weights, spec, pads, tiled, out, cols)
    return (out[0] if squeeze else out), cache


def conv2d_backward(grad_out, cache, need_input_grad=True, need_weight_grad=True, need_bias_grad=True):
    """Returns ``(grad_input, grad_weights, grad_bias)``; skipped entries are None."""
    xp, in_shape, weights, spec, pads, tiled, out, cols = cache
    squeeze = grad_out.ndim == 3
    g, _ = _as_batch(grad_out)
    if g.shape != out.shape:
        raise DimensionError(f"grad shape {grad_out.shape} does not match output {out.shape}")
    g = activation_backward(g, out, spec.activation)
    N, C, H, W = in_shape
    _, O, Ho, Wo = g.shape
    kh, kw, sh, sw, d = spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, spec.dilation

    dw = db = dx = None
    if need_bias_grad:
        db = g.sum(axis=(0, 2, 3))
    if tiled:
        xr = xp[:, :, :Ho * kh, :Wo * kw].reshape(N, C, Ho, kh, Wo, kw)
        if need_weight_grad:
            dw = np.tensordot(g, xr, axes=([0, 2, 3], [0, 2, 4]))
        if need_input_grad:
            dxr = np.tensordot(g, weights, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
            dx = np.zeros(in_shape, dtype=dxr.dtype)
            dx[:, :, :Ho * kh, :Wo * kw] = dxr.transpose(0, 3, 1, 4, 2, 5).reshape(N, C, Ho * kh, Wo * kw)
    elif cols is not None:
        g2 = g.transpose(1, 0, 2, 3).reshape(O, -1)
        if need_weight_grad:
            dw = (g2 @ cols.T).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        if need_input_grad:
            w2 = weights.transpose(0, 2, 3, 1).reshape(O, -1)
            dcols = (w2.T @ g2).reshape(kh, kw, C, N, Ho, Wo)
            dxp = np.zeros(xp.shape, dtype=dcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    _window(dxp, i * d, j * d, Ho, Wo, sh, sw)[...] += dcols[i, j].transpose(1, 0, 2, 3)
            pt, _, pl, _ = pads
            dx = dxp[:, :, pt:pt + H, pl:pl + W]
    else:
        if need_weight_grad:
            dw = np.empty_like(weights, dtype=np.result_type(g, weights))
        if need_input_grad:
            dxp = np.zeros(xp.shape, dtype=np.result_type(g, weights))
        for i in range(kh):
            for j in range(kw):
                if need_weight_grad:
                    xs = _window(xp, i * d, j * d, Ho, Wo, sh, sw)
                    dw[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                if need_input_grad:
                    contrib = np.tensordot(weights[:, :, i, j], g, axes=([0], [1]))  # C, N, Ho, Wo
                    _window(dxp, i * d, j * d, Ho, Wo, sh, sw)[...] += contrib.transpose(1, 0, 2, 3)
        if need_input_grad:
            pt, _, pl, _ = pads
            dx = dxp[:, :, pt:pt + H, pl:pl + W]
    if dx is not None:
        dx = np.ascontiguousarray(dx)
        if squeeze:
            dx = dx[0]
    return dx, dw, db


def _pad(x, pads):
    pt, pb, pl, pr = pads
    if not any(pads):
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _im2col(xp, kh, kw, Ho, Wo, sh, sw, d):
    """Tap-major patch matrix ``(kh*kw*C, N*Ho*Wo)``: row ``(i, j, c)``, column ``(n, y, x)``."""
    N, C = xp.shape[:2]
    cols = np.empty((kh, kw, C, N, Ho, Wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = _window(xp, i * d, j * d, Ho, Wo, sh, sw).transpose(1, 0, 2, 3)
    return cols.reshape(kh * kw * C, N * Ho * Wo)


def _window(xp, i0, j0, Ho, Wo, sh, sw):
    return xp[:, :, i0:i0 + sh * (Ho - 1) + 1:sh, j0:j0 + sw * (Wo - 1) + 1:sw]


def maxpool2x2_forward(x):
    x, squeeze = _as_batch(x)
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2x2 needs even extents, got {H}x{W}")
    windows = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = windows.argmax(axis=-1)
    if _patterns is not None:
        _patterns.append(idx)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return (out[0] if squeeze else out), (x.shape, idx)


def maxpool2x2_backward(grad_out, cache):
    shape, idx = cache
    squeeze = grad_out.ndim == 3
    g, _ = _as_batch(grad_out)
    N, C, H, W = shape
    windows = np.zeros(idx.shape + (4,), dtype=g.dtype)
    np.put_along_axis(windows, idx[..., None], g[..., None], axis=-1)
    dx = windows.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
    return dx[0] if squeeze else dx


def resize_bilinear_forward(x, size):
    """Bilinear resampling of the two trailing axes to ``size = (H2, W2)``."""
    x, squeeze = _as_batch(x)
    H, W = x.shape[2:]
    Ah = linear_resize_matrix(H, size[0]).astype(x.dtype, copy=False)
    Aw = linear_resize_matrix(W, size[1]).astype(x.dtype, copy=False)
    out = np.matmul(np.matmul(Ah, x), Aw.T)
    return (out[0] if squeeze else out), (Ah, Aw)


def resize_bilinear_backward(grad_out, cache):
    Ah, Aw = cache
    return np.matmul(np.matmul(Ah.T, grad_out), Aw)


def upsample_bilinear_forward(x, factor: int):
    H, W = x.shape[-2:]
    return resize_bilinear_forward(x, (H * factor, W * factor))


upsample_bilinear_backward = resize_bilinear_backward


def weighted_bce_loss(P, Y, alpha_s: float = 0.528, eps: float = 1e-7):
    """Class-weighted binary cross entropy, averaged over every pixel.

    Returns ``(loss, grad_P)``. Predictions are clamped to ``[eps, 1 - eps]``;
    the gradient is zero where the clamp is active.
    """
    P = np.asarray(P, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if P.shape != Y.shape:
        raise DimensionError(f"prediction {P.shape} and target {Y.shape} differ in shape")
    Pc = np.clip(P, eps, 1 - eps)
    n = P.size
    loss = -np.sum(alpha_s * Y * np.log(Pc) + (1 - alpha_s) * (1 - Y) * np.log(1 - Pc)) / n
    grad = -(alpha_s * Y / Pc - (1 - alpha_s) * (1 - Y) / (1 - Pc)) / n
    grad = grad * ((P >= eps) & (P <= 1 - eps))
    check_finite(np.asarray(loss), "weighted_bce_loss")
    return float(loss), grad
