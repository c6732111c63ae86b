"""Light field feature extraction and encoding (FEE) network.

Five convolutions turn a packed micro-lens image ``(3, 9S, 9T)`` into a
three-channel map ``(3, S/2, T/2)`` that a 2-D saliency detector can consume:

====  =======  ======  ======  =======  ==========
name  filters  kernel  stride  padding  activation
====  =======  ======  ======  =======  ==========
L1    128      9x9     9       valid    relu
L2    64       3x3     1       same     relu
L3    32       3x3     1       same     relu
L4    32       3x3     2       same     relu
L5    3        1x1     1       same     none
====  =======  ======  ======  =======  ==========

L1 tiles the input with disjoint 9x9 windows, so each of its outputs sees one
spatial position across all 81 views.
"""
from __future__ import annotations

import numpy as np

from . import engine as E
from . import functional as F
from .errors import DimensionError
from .functional import ConvLayerSpec
from .params import ParamSet, he_uniform

ANGULAR = 9

FEE_LAYERS = (
    ("L1", 3, ConvLayerSpec(128, 9, 9, 9, 9, "valid", "relu")),
    ("L2", 128, ConvLayerSpec(64, 3, 3, 1, 1, "same", "relu")),
    ("L3", 64, ConvLayerSpec(32, 3, 3, 1, 1, "same", "relu")),
    ("L4", 32, ConvLayerSpec(32, 3, 3, 2, 2, "same", "relu")),
    ("L5", 32, ConvLayerSpec(3, 1, 1, 1, 1, "same", "none")),
)


def build_fee(seed: int = 0) -> ParamSet:
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for name, c_in, spec in FEE_LAYERS:
        params.add(f"fee.{name}.weight", he_uniform(rng, spec.weight_shape(c_in)))
        params.add(f"fee.{name}.bias", np.zeros(spec.out_channels))
    return params


def fee_graph(x: E.Var, pv: dict[str, E.Var], taps: dict | None = None) -> E.Var:
    """Differentiable forward on a batch ``(N, 3, H, W)``."""
    H, W = x.shape[-2:]
    if H % ANGULAR or W % ANGULAR:
        raise DimensionError(f"FEE input {H}x{W} is not tiled by {ANGULAR}x{ANGULAR} angular blocks")
    for name, _, spec in FEE_LAYERS:
        x = E.conv2d(x, pv[f"fee.{name}.weight"], pv[f"fee.{name}.bias"], spec)
        if taps is not None:
            taps[name] = x.value
    return x


def fee_forward(mla, params: ParamSet, taps: dict | None = None, dtype=None) -> np.ndarray:
    """Encode one ``(3, H, W)`` or a batch ``(N, 3, H, W)`` of micro-lens images.

    ``taps``, if given, receives each layer's activation keyed ``"L1"``..``"L5"``.
    """
    x = np.asarray(mla)
    if dtype is not None:
        x = x.astype(dtype, copy=False)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    out = fee_graph(E.Var(x), params.as_vars(trainable=False, dtype=dtype), taps).value
    if squeeze and taps is not None:
        for k in taps:
            taps[k] = taps[k][0]
    return out[0] if squeeze else out


def fee_macs(H: int, W: int) -> list[int]:
    """Closed-form multiply-accumulate count per FEE layer for an ``H x W`` input."""
    macs = []
    for _, c_in, spec in FEE_LAYERS:
        H, W = spec.output_size(H, W)
        macs.append(spec.out_channels * c_in * spec.kernel_h * spec.kernel_w * H * W)
    return macs


def fee_receptive_check(params: ParamSet, H: int = 36, W: int = 36, n_probes: int = 20, seed: int = 0,
                        pixels=None) -> dict:
    """Gradient-probe the first layer's footprint.

    Two probes, both on L1 without its ReLU so no dependency is masked:

    * backward: a unit gradient at one L1 output location ``(i, j)`` must reach
      exactly the input block ``[9i, 9i+9) x [9j, 9j+9)`` (all channels);
    * forward: perturbing one input pixel must change exactly one L1 column,
      the one at ``(y // 9, x // 9)``.
    """
    rng = np.random.default_rng(seed)
    _, _, spec = FEE_LAYERS[0]
    linear = ConvLayerSpec(spec.out_channels, 9, 9, 9, 9, "valid", "none")
    w, b = params["fee.L1.weight"], params["fee.L1.bias"]
    base_in = rng.uniform(0, 1, size=(3, H, W))
    base_out, cache = F.conv2d_forward(base_in, linear, w, b)
    Ho, Wo = base_out.shape[1:]

    backward_rows = []
    for _ in range(n_probes):
        i, j = int(rng.integers(Ho)), int(rng.integers(Wo))
        g = np.zeros_like(base_out)
        g[:, i, j] = 1.0
        dx, _, _ = F.conv2d_backward(g, cache, need_weight_grad=False)
        hit = np.argwhere(np.abs(dx).sum(axis=0) > 0)
        rows_hit = (hit[:, 0].min(), hit[:, 0].max()) if len(hit) else None
        cols_hit = (hit[:, 1].min(), hit[:, 1].max()) if len(hit) else None
        ok = len(hit) == 81 and rows_hit == (9 * i, 9 * i + 8) and cols_hit == (9 * j, 9 * j + 8)
        backward_rows.append({"output": (i, j), "n_inputs": len(hit), "ok": bool(ok)})

    if pixels is None:
        pixels = [(int(rng.integers(3)), int(rng.integers(H)), int(rng.integers(W))) for _ in range(n_probes)]
    forward_rows = []
    for c, y, x in pixels:
        bumped = base_in.copy()
        bumped[c, y, x] += 1.0
        out, _ = F.conv2d_forward(bumped, linear, w, b)
        changed = np.argwhere(np.abs(out - base_out).sum(axis=0) > 0)
        footprint = sorted((int(a), int(bb)) for a, bb in changed)
        expected = [(y // 9, x // 9)]
        forward_rows.append({"pixel": (c, y, x), "footprint": footprint, "ok": footprint == expected})
    return {"backward": backward_rows, "forward": forward_rows,
            "ok": all(r["ok"] for r in backward_rows + forward_rows)}
