"""Attention-based 2-D saliency detector fed by the FEE encoding.

Wiring for an ``H x W`` input (``H, W`` divisible by 16):

* VGG-16 style backbone; taps ``conv1_2`` (H), ``conv2_2`` (H/2), ``conv3_3``
  (H/4), ``conv4_3`` (H/8), ``conv5_3`` (H/16).
* High-level path: context-aware pyramid features (CPFE) on conv3_3..conv5_3,
  resampled to H/4 and concatenated, then channel attention (CA), a 1x1 conv
  and x4 bilinear upsampling.
* Low-level path: conv1_2 with upsampled conv2_2, a 3x3 conv, then a spatial
  attention (SA) mask computed from the upsampled high-level summary.
* Head: concatenate both paths, 3x3 conv to one channel, sigmoid.

Layer widths come from the parameter shapes, so a parameter set fully
defines the network; :data:`PROFILES` lists the stock width choices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .errors import DimensionError
from .fee import fee_forward
from .functional import ConvLayerSpec
from .lightfield import LightField, mla_from_sai, resize_spatial
from .params import ParamSet, he_uniform

VGG_STAGES = (2, 2, 3, 3, 3)
HIGH_TAPS = ("conv3_3", "conv4_3", "conv5_3")
CPFE_BRANCHES = (("b1", 1, 1), ("d3", 3, 3), ("d5", 3, 5), ("d7", 3, 7))  # (name, kernel, dilation)


@dataclass(frozen=True)
class Profile:
    widths: tuple[int, int, int, int, int]
    cpfe_branch: int
    fuse: int
    ca_reduction: int = 4
    sa_kernel: int = 9


PROFILES = {
    "full": Profile((64, 128, 256, 512, 512), cpfe_branch=32, fuse=64),
    "toy": Profile((16, 32, 64, 64, 64), cpfe_branch=8, fuse=16),
    # narrow enough for exhaustive finite-difference checks
    "micro": Profile((4, 4, 6, 6, 6), cpfe_branch=2, fuse=4, ca_reduction=2, sa_kernel=5),
}


def backbone_layers(profile: Profile):
    """``[(name, c_in, c_out), ...]`` for the 13 backbone convs."""
    layers, c_in = [], 3
    for stage, (n, width) in enumerate(zip(VGG_STAGES, profile.widths), start=1):
        for k in range(1, n + 1):
            layers.append((f"conv{stage}_{k}", c_in, width))
            c_in = width
    return layers


def build_detector(profile: str | Profile = "toy", seed: int = 1, prior: float = 0.1) -> ParamSet:
    prof = PROFILES[profile] if isinstance(profile, str) else profile
    rng = np.random.default_rng(seed)
    params = ParamSet()

    def conv(name, c_in, c_out, kh, kw):
        params.add(f"{name}.weight", he_uniform(rng, (c_out, c_in, kh, kw)))
        params.add(f"{name}.bias", np.zeros(c_out))

    for name, c_in, c_out in backbone_layers(prof):
        conv(f"det.backbone.{name}", c_in, c_out, 3, 3)
    tap_width = dict(zip(HIGH_TAPS, prof.widths[2:]))
    for tap in HIGH_TAPS:
        for branch, k, _ in CPFE_BRANCHES:
            conv(f"det.cpfe.{tap}.{branch}", tap_width[tap], prof.cpfe_branch, k, k)
    c_high = 3 * len(CPFE_BRANCHES) * prof.cpfe_branch
    c_mid = max(c_high // prof.ca_reduction, 1)
    for fc, (c_out, c_in) in (("fc1", (c_mid, c_high)), ("fc2", (c_high, c_mid))):
        params.add(f"det.ca.{fc}.weight", he_uniform(rng, (c_out, c_in)))
        params.add(f"det.ca.{fc}.bias", np.zeros(c_out))
    f, k, half = prof.fuse, prof.sa_kernel, max(prof.fuse // 2, 1)
    conv("det.head.high", c_high, f, 1, 1)
    conv("det.head.low", prof.widths[0] + prof.widths[1], f, 3, 3)
    conv("det.sa.a1", f, half, k, 1)
    conv("det.sa.a2", half, 1, 1, k)
    conv("det.sa.b1", f, half, 1, k)
    conv("det.sa.b2", half, 1, k, 1)
    conv("det.head.out", 2 * f, 1, 3, 3)
    # start the output at the expected salient fraction rather than 0.5
    params.values["det.head.out.bias"][:] = np.log(prior / (1 - prior))
    return params


def _conv(x, pv, name, activation="relu", dilation=1, stride=1):
    w = pv[f"{name}.weight"]
    O, _, kh, kw = w.shape
    spec = ConvLayerSpec(O, kh, kw, stride, stride, "same", activation, dilation)
    return E.conv2d(x, w, pv[f"{name}.bias"], spec)


def backbone_graph(x, pv):
    H, W = x.shape[-2:]
    if H % 16 or W % 16:
        raise DimensionError(f"detector input {H}x{W} must be divisible by 16")
    taps = {}
    for stage, n in enumerate(VGG_STAGES, start=1):
        if stage > 1:
            x = E.maxpool2x2(x)
        for k in range(1, n + 1):
            x = _conv(x, pv, f"det.backbone.conv{stage}_{k}")
        taps[f"conv{stage}_{n}"] = x
    return taps


def cpfe_graph(taps, pv):
    size = taps["conv3_3"].shape[-2:]
    maps = []
    for tap in HIGH_TAPS:
        branches = [_conv(taps[tap], pv, f"det.cpfe.{tap}.{b}", dilation=d) for b, _, d in CPFE_BRANCHES]
        maps.append(E.resize_bilinear(E.concat(branches), size))
    return E.concat(maps)


def channel_gate_graph(f, pv):
    pooled = E.global_avg_pool(f)
    h = E.relu(E.linear(pooled, pv["det.ca.fc1.weight"], pv["det.ca.fc1.bias"]))
    return E.sigmoid(E.linear(h, pv["det.ca.fc2.weight"], pv["det.ca.fc2.bias"]))


def channel_attention_graph(f, pv):
    g = channel_gate_graph(f, pv)
    return E.mul(f, E.reshape(g, g.shape + (1, 1)))


def spatial_mask_graph(high, pv):
    a = _conv(_conv(high, pv, "det.sa.a1"), pv, "det.sa.a2", activation="none")
    b = _conv(_conv(high, pv, "det.sa.b1"), pv, "det.sa.b2", activation="none")
    return E.sigmoid(E.add(a, b))


def spatial_attention_graph(low, high, pv):
    return E.mul(low, spatial_mask_graph(high, pv))


def detector_graph(x, pv, record: dict | None = None):
    """Differentiable detector on ``(N, 3, H, W)``; returns ``(N, 1, H, W)``."""
    H, W = x.shape[-2:]
    taps = backbone_graph(x, pv)
    high = cpfe_graph(taps, pv)
    high_ca = channel_attention_graph(high, pv)
    high_sum = _conv(high_ca, pv, "det.head.high")
    high_up = E.resize_bilinear(high_sum, (H, W))
    low_in = E.concat([taps["conv1_2"], E.resize_bilinear(taps["conv2_2"], (H, W))])
    low = _conv(low_in, pv, "det.head.low")
    low_sa = spatial_attention_graph(low, high_up, pv)
    fused = E.concat([low_sa, high_up])
    out = _conv(fused, pv, "det.head.out", activation="sigmoid")
    if record is not None:
        record.update({k: v.value for k, v in taps.items()})
        record.update(cpfe=high.value, ca=high_ca.value, high_summary=high_sum.value, high_up=high_up.value,
                      low_features=low_in.value, low=low.value, low_sa=low_sa.value, fused=fused.value,
                      saliency=out.value)
    return out


def _run(fn, params, *arrays, dtype=None):
    squeeze = arrays[0].ndim == 3
    vs = [E.Var(a[None] if squeeze else a) for a in arrays]
    if dtype is not None:
        for v in vs:
            v.value = v.value.astype(dtype, copy=False)
    out = fn(*vs, params.as_vars(trainable=False, dtype=dtype))
    if isinstance(out, dict):
        return {k: (v.value[0] if squeeze else v.value) for k, v in out.items()}
    return out.value[0] if squeeze else out.value


def backbone_forward(image, params: ParamSet, dtype=None) -> dict[str, np.ndarray]:
    """Backbone taps ``conv1_2`` .. ``conv5_3`` for ``(3, H, W)`` or ``(N, 3, H, W)``."""
    return _run(backbone_graph, params, np.asarray(image), dtype=dtype)


def cpfe(conv3_3, conv4_3, conv5_3, params: ParamSet) -> np.ndarray:
    return _run(lambda a, b, c, pv: cpfe_graph({"conv3_3": a, "conv4_3": b, "conv5_3": c}, pv),
                params, np.asarray(conv3_3), np.asarray(conv4_3), np.asarray(conv5_3))


def channel_gate(f, params: ParamSet) -> np.ndarray:
    return _run(channel_gate_graph, params, np.asarray(f))


def channel_attention(f, params: ParamSet) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim not in (3, 4) or f.shape[-3] != params["det.ca.fc1.weight"].shape[1]:
        raise DimensionError(f"channel attention expects {params['det.ca.fc1.weight'].shape[1]} channels, "
                             f"got shape {f.shape}")
    return _run(channel_attention_graph, params, f)


def spatial_mask(high_summary, params: ParamSet) -> np.ndarray:
    return _run(spatial_mask_graph, params, np.asarray(high_summary))


def spatial_attention(low, high_summary, params: ParamSet) -> np.ndarray:
    """Gate ``low`` by the mask computed from ``high_summary``.

    A summary at a coarser grid than ``low`` is bilinearly upsampled first.
    """
    low, high = np.asarray(low), np.asarray(high_summary)
    if high.shape[-3] != params["det.sa.a1.weight"].shape[1]:
        raise DimensionError(f"high-level summary has {high.shape[-3]} channels, "
                             f"expected {params['det.sa.a1.weight'].shape[1]}")

    def fn(lo, hi, pv):
        return spatial_attention_graph(lo, E.resize_bilinear(hi, lo.shape[-2:]), pv)

    return _run(fn, params, low, high)


def detector_forward(encoded, params: ParamSet, record: dict | None = None, dtype=None) -> np.ndarray:
    """Saliency ``(1, H, W)`` (or ``(N, 1, H, W)``) in (0, 1) for an encoded image."""
    encoded = np.asarray(encoded)
    squeeze = encoded.ndim == 3
    out = _run(lambda x, pv: detector_graph(x, pv, record), params, encoded, dtype=dtype)
    if record is not None and squeeze:
        for k in record:
            record[k] = record[k][0]
    return out


def pipeline_forward(lf: LightField, fee: ParamSet, det: ParamSet, spatial: int = 512,
                     record: dict | None = None, dtype=None) -> np.ndarray:
    """Light field to a ``(spatial/2, spatial/2)`` saliency map.

    Views are resized to ``spatial x spatial`` (skipped when already there),
    packed into a micro-lens image, encoded and passed through the detector.
    ``record`` collects intermediate activations keyed by layer name.
    """
    if lf.spatial_res != (spatial, spatial):
        lf = resize_spatial(lf, spatial, spatial)
    x = mla_from_sai(lf).to_tensor()
    taps = {} if record is not None else None
    encoded = fee_forward(x, fee, taps=taps, dtype=dtype)
    del x
    sal = detector_forward(encoded, det, record=record, dtype=dtype)
    if record is not None:
        record.update({f"fee.{k}": v for k, v in taps.items()})
    return sal[0]


def detector_macs(params: ParamSet, H: int, W: int) -> int:
    """Closed-form conv multiply-accumulates of :func:`detector_forward` at ``H x W``."""
    def conv_macs(name, h, w):
        O, C, kh, kw = params[f"{name}.weight"].shape
        return O * C * kh * kw * h * w

    total, h, w = 0, H, W
    grid = {}
    for stage, n in enumerate(VGG_STAGES, start=1):
        if stage > 1:
            h, w = h // 2, w // 2
        for k in range(1, n + 1):
            total += conv_macs(f"det.backbone.conv{stage}_{k}", h, w)
        grid[f"conv{stage}_{n}"] = (h, w)
    for tap in HIGH_TAPS:
        for b, _, _ in CPFE_BRANCHES:
            total += conv_macs(f"det.cpfe.{tap}.{b}", *grid[tap])
    total += conv_macs("det.head.high", *grid["conv3_3"])
    for name in ("det.head.low", "det.sa.a1", "det.sa.a2", "det.sa.b1", "det.sa.b2", "det.head.out"):
        total += conv_macs(name, H, W)
    return total
