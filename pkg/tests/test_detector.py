import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from lfsal import engine as E
from lfsal import functional as F
from lfsal.detector import (PROFILES, backbone_forward, backbone_layers, build_detector, channel_attention,
                            channel_gate, cpfe, cpfe_graph, detector_forward, detector_graph, detector_macs,
                            pipeline_forward, spatial_attention, spatial_mask)
from lfsal.errors import DimensionError
from lfsal.fee import build_fee
from lfsal.functional import ConvLayerSpec, count_macs
from lfsal.gradcheck import check_over_points
from lfsal.lightfield import LightField


@pytest.fixture(scope="module")
def toy():
    return build_detector("toy", seed=1)


def zero_biases(p):
    q = p.copy()
    for n in q.names():
        if n.endswith("bias"):
            q[n][:] = 0
    return q


def test_toy_tap_shapes_at_256(toy):
    taps = backbone_forward(np.random.default_rng(0).uniform(size=(3, 256, 256)), toy)
    assert {k: v.shape for k, v in taps.items()} == {
        "conv1_2": (16, 256, 256), "conv2_2": (32, 128, 128), "conv3_3": (64, 64, 64),
        "conv4_3": (64, 32, 32), "conv5_3": (64, 16, 16)}


def test_backbone_zero_input_gives_zero_taps(toy):
    taps = backbone_forward(np.zeros((3, 32, 32)), zero_biases(toy))
    assert all(not v.any() for v in taps.values())


def test_backbone_size_error(toy):
    with pytest.raises(DimensionError):
        backbone_forward(np.zeros((3, 250, 256)), toy)


def test_backbone_layer_table():
    layers = backbone_layers(PROFILES["full"])
    assert len(layers) == 13 and layers[-1] == ("conv5_3", 512, 512) and layers[1] == ("conv1_2", 64, 64)


def test_cpfe_channel_counts(toy):
    rng = np.random.default_rng(1)
    taps = backbone_forward(rng.uniform(size=(3, 64, 64)), toy)
    out = cpfe(taps["conv3_3"], taps["conv4_3"], taps["conv5_3"], toy)
    assert out.shape == (3 * 4 * 8, 16, 16)
    full = build_detector("full", seed=1)
    z = cpfe(np.zeros((256, 8, 8)), np.zeros((512, 4, 4)), np.zeros((512, 2, 2)), full)
    assert z.shape == (384, 8, 8)


def test_cpfe_zero_taps(toy):
    z = zero_biases(toy)
    assert not cpfe(np.zeros((64, 8, 8)), np.zeros((64, 4, 4)), np.zeros((64, 2, 2)), z).any()


def test_dilation_seven_footprint(toy):
    # unit gradient on one d7 output at the centre of a 64x64 grid reaches a 15x15 extent of conv3_3
    rng = np.random.default_rng(2)
    pv = toy.as_vars(trainable=False)
    x = E.Var(rng.uniform(0.5, 1.0, size=(1, 64, 64, 64)), requires_grad=True)
    taps = {"conv3_3": x, "conv4_3": E.Var(np.zeros((1, 64, 32, 32))), "conv5_3": E.Var(np.zeros((1, 64, 16, 16)))}
    out = cpfe_graph(taps, pv)
    w = toy["det.cpfe.conv3_3.d7.weight"]
    spec = ConvLayerSpec(8, 3, 3, dilation=7, activation="none")
    pre, _ = F.conv2d_forward(x.value, spec, w, toy["det.cpfe.conv3_3.d7.bias"])
    c = int(np.argmax(pre[0, :, 32, 32]))  # an active unit, so the ReLU passes gradient
    assert pre[0, c, 32, 32] > 0
    g = np.zeros(out.shape)
    g[0, 24 + c, 32, 32] = 1.0  # branch order b1, d3, d5, d7 with 8 channels each
    E.backward(out, g)
    hit = np.argwhere(np.abs(x.grad[0]).sum(axis=0) > 0)
    assert hit[:, 0].min() == 25 and hit[:, 0].max() == 39
    assert hit[:, 1].min() == 25 and hit[:, 1].max() == 39
    assert len(hit) == 9 and set(map(tuple, hit)) == {(25 + 7 * i, 25 + 7 * j) for i in range(3) for j in range(3)}


def ca_oracle(f, p):
    pooled = f.mean(axis=(1, 2))
    h = np.maximum(p["det.ca.fc1.weight"] @ pooled + p["det.ca.fc1.bias"], 0)
    g = 1 / (1 + np.exp(-(p["det.ca.fc2.weight"] @ h + p["det.ca.fc2.bias"])))
    return g, f * g[:, None, None]


def test_channel_attention_oracle(toy):
    rng = np.random.default_rng(3)
    p = toy.copy()
    p["det.ca.fc1.bias"][:] = rng.normal(0, 0.3, p["det.ca.fc1.bias"].shape)
    f = rng.normal(size=(96, 6, 5))
    g, expected = ca_oracle(f, p)
    assert np.allclose(channel_gate(f, p), g, atol=1e-12)
    assert np.allclose(channel_attention(f, p), expected, atol=1e-12)


def test_channel_attention_forced_gates(toy):
    f = np.random.default_rng(4).normal(size=(96, 4, 4))
    p = toy.copy()
    p["det.ca.fc2.weight"][:] = 0
    p["det.ca.fc2.bias"][:] = 60.0
    assert np.array_equal(channel_attention(f, p), f)
    zero_out = channel_attention(np.zeros((96, 4, 4)), toy)
    assert not zero_out.any()
    assert np.allclose(channel_gate(np.zeros((96, 4, 4)), zero_biases(toy)), 0.5)


def test_channel_attention_wrong_channels(toy):
    with pytest.raises(DimensionError):
        channel_attention(np.zeros((10, 4, 4)), toy)


def sa_mask_oracle(high, p):
    def conv(x, name, relu):
        w, b = p[f"{name}.weight"], p[f"{name}.bias"]
        out = np.stack([sum(ndimage.correlate(x[c], w[o, c], mode="constant") for c in range(x.shape[0])) + b[o]
                        for o in range(w.shape[0])])
        return np.maximum(out, 0) if relu else out

    a = conv(conv(high, "det.sa.a1", True), "det.sa.a2", False)
    b = conv(conv(high, "det.sa.b1", True), "det.sa.b2", False)
    return 1 / (1 + np.exp(-(a + b)))[0]


def test_spatial_attention_pointwise(toy):
    rng = np.random.default_rng(5)
    p = toy.copy()
    for n in ("det.sa.a1.bias", "det.sa.b1.bias"):
        p[n][:] = rng.normal(0, 0.2, p[n].shape)
    high = rng.normal(size=(16, 11, 11))
    low = rng.normal(size=(16, 11, 11))
    m = sa_mask_oracle(high, p)
    assert np.allclose(spatial_mask(high, p)[0], m, atol=1e-12)
    out = spatial_attention(low, high, p)
    for _ in range(100):
        c, y, x = rng.integers(16), rng.integers(11), rng.integers(11)
        assert abs(out[c, y, x] - m[y, x] * low[c, y, x]) < 1e-12


def test_spatial_attention_forced_masks(toy):
    rng = np.random.default_rng(6)
    low, high = rng.normal(size=(16, 8, 8)), rng.normal(size=(16, 8, 8))
    for sign, check in ((1, lambda o: np.array_equal(o, low)), (-1, lambda o: np.abs(o).max() < 1e-20)):
        p = toy.copy()
        for n in ("det.sa.a2", "det.sa.b2"):
            p[f"{n}.weight"][:] = 0
            p[f"{n}.bias"][:] = sign * 60.0
        assert check(spatial_attention(low, high, p))


def test_spatial_attention_upsamples_coarse_summary(toy):
    rng = np.random.default_rng(7)
    low = rng.normal(size=(16, 16, 16))
    out = spatial_attention(low, rng.normal(size=(16, 4, 4)), toy)
    assert out.shape == low.shape
    with pytest.raises(DimensionError):
        spatial_attention(low, np.zeros((5, 4, 4)), toy)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gates_are_contractions(seed):
    rng = np.random.default_rng(seed)
    p = build_detector("micro", seed=seed % 1000)
    f = rng.normal(0, 3, size=(24, 5, 5))
    assert np.abs(channel_attention(f, p)).max() <= np.abs(f).max()
    low, high = rng.normal(0, 3, size=(4, 6, 6)), rng.normal(0, 3, size=(4, 6, 6))
    assert np.abs(spatial_attention(low, high, p)).max() <= np.abs(low).max()


def test_detector_output_range_and_purity(toy):
    x = np.random.default_rng(8).normal(size=(3, 32, 48))
    a, b = detector_forward(x, toy), detector_forward(x, toy)
    assert a.shape == (1, 32, 48) and np.array_equal(a, b)
    assert a.min() > 0 and a.max() < 1


def test_detector_records_fusion_shapes():
    full = build_detector("full", seed=1)
    rec = {}
    detector_forward(np.random.default_rng(9).normal(size=(3, 32, 32)), full, record=rec)
    assert rec["low_features"].shape == (192, 32, 32)
    assert rec["cpfe"].shape == (384, 8, 8)
    assert rec["high_summary"].shape == (64, 8, 8) and rec["high_up"].shape == (64, 32, 32)
    assert rec["low"].shape == (64, 32, 32) and rec["fused"].shape == (128, 32, 32)
    assert rec["saliency"].shape == (1, 32, 32)


def test_detector_macs_match_counter(toy):
    with count_macs() as counter:
        detector_forward(np.zeros((3, 32, 64)), toy)
    assert counter[0] == detector_macs(toy, 32, 64)


def test_prior_bias():
    p = build_detector("micro", seed=1, prior=0.25)
    assert np.isclose(p["det.head.out.bias"][0], np.log(1 / 3))
    # zero input with zero hidden biases leaves only the head bias: output equals the prior
    q = zero_biases(p)
    q["det.head.out.bias"][:] = p["det.head.out.bias"]
    assert np.allclose(detector_forward(np.zeros((3, 16, 16)), q), 0.25)


def test_pipeline_small_field():
    rng = np.random.default_rng(10)
    lf = LightField(rng.uniform(size=(9, 9, 32, 24, 3)))
    rec = {}
    sal = pipeline_forward(lf, build_fee(0), build_detector("micro"), spatial=32, record=rec)
    assert sal.shape == (16, 16) and 0 < sal.min() and sal.max() < 1
    assert rec["fee.L1"].shape == (128, 32, 32) and rec["fee.L5"].shape == (3, 16, 16)


def test_component_gradients():
    p = build_detector("micro", seed=3)
    rng = np.random.default_rng(11)

    def points(k):
        r = np.random.default_rng(200 + k)
        v = {n: p[n] + (r.normal(0, 0.1, p[n].shape) if n.endswith("bias") else 0) for n in p.names("det.ca.")}
        v.update({n: p[n] + r.normal(0, 0.1, p[n].shape) * n.endswith("bias") for n in p.names("det.sa.")})
        v["f"] = rng.normal(size=(1, 24, 4, 4))
        v["low"] = rng.normal(size=(1, 4, 8, 8))
        v["high"] = rng.normal(size=(1, 4, 8, 8))
        return v

    from lfsal.detector import channel_attention_graph, spatial_attention_graph

    def fn(v):
        return E.concat([E.reshape(channel_attention_graph(v["f"], v), (1, 24, 2, 8)),
                         E.reshape(spatial_attention_graph(v["low"], v["high"], v), (1, 16, 2, 8))])

    errs = check_over_points(fn, points, n_probes=20)
    assert max(errs.values()) < 1e-4, errs


def test_backbone_and_head_gradients():
    p = build_detector("micro", seed=4)

    def points(k):
        r = np.random.default_rng(300 + k)
        v = {n: p[n] + (r.normal(0, 0.1, p[n].shape) if n.endswith("bias") else 0) for n in p.names()}
        v["x"] = r.uniform(size=(1, 3, 16, 16))
        return v

    errs = check_over_points(lambda v: detector_graph(v["x"], v), points, n_probes=20, max_points=8)
    assert set(errs) == set(p.names()) | {"x"} and max(errs.values()) < 1e-4, errs
