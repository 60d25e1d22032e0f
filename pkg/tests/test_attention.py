import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dacbnet import oracles
from dacbnet.attention import (
    ECA,
    AttentionConfig,
    ChannelAttention,
    DualAttention,
    SpatialAttention,
    eca_kernel_size,
    shortcut_attention_embed,
)
from dacbnet.core import ops
from dacbnet.core.gradcheck import grad_check
from dacbnet.core.rng import make_rng

C = 16


def _ln(x, eps=1e-5):
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def _conv(x, conv):
    return oracles.conv2d(x, conv.params["w"], conv.params["b"], conv.stride, conv.pad)


def _branch_oracle(x, seq):
    conv_in, _, _, conv_out = seq.layers
    return _conv(np.maximum(_ln(_conv(x, conv_in)), 0.0), conv_out)


def cam_oracle(cam, x):
    B, c = x.shape[:2]
    avg = oracles.global_avg_pool(x)
    mx = np.array([[[[x[b, i].max()]] for i in range(c)] for b in range(B)])
    return _sig(_branch_oracle(np.concatenate([avg, mx], axis=1), cam.mlp))


def sam_oracle(sam, x):
    return _sig(_branch_oracle(x, sam.b1) * _branch_oracle(x, sam.b3))


@pytest.fixture
def x():
    return make_rng(11).standard_normal((2, C, 5, 5))


# -- channel attention -------------------------------------------------------

def test_cam_shape_and_range(x):
    out = ChannelAttention(AttentionConfig(C), make_rng(0)).forward(x)
    assert out.shape == (2, C, 1, 1) and np.all((out > 0) & (out < 1))


def test_cam_constant_map_has_identical_halves():
    x = np.full((1, C, 4, 4), 0.7)
    assert np.array_equal(ops.global_avg_pool(x), ops.global_max_pool_forward(x)[0])
    cam = ChannelAttention(AttentionConfig(C), make_rng(0))
    before = cam.forward(x)
    w = cam.mlp.layers[0].params["w"]
    w[:] = np.concatenate([w[:, C:], w[:, :C]], axis=1)
    assert np.allclose(cam.forward(x), before, atol=1e-15, rtol=0)


def test_cam_vs_composed_oracle(x):
    cam = ChannelAttention(AttentionConfig(C), make_rng(1))
    assert np.max(np.abs(cam.forward(x) - cam_oracle(cam, x))) < 1e-12


@given(st.floats(-1e6, 1e6), st.floats(0.0, 1e4), st.integers(0, 1000))
def test_cam_sam_strictly_in_unit_interval(shift, scale, seed):
    x = make_rng(seed).standard_normal((1, C, 4, 4)) * scale + shift
    a = ChannelAttention(AttentionConfig(C), make_rng(seed)).forward(x)
    s = SpatialAttention(AttentionConfig(C), make_rng(seed)).forward(x)
    assert np.all((a > 0) & (a < 1)) and np.all((s > 0) & (s < 1))


# -- spatial attention -------------------------------------------------------

def test_sam_shape_and_range(x):
    out = SpatialAttention(AttentionConfig(C), make_rng(0)).forward(x)
    assert out.shape == (2, 1, 5, 5) and np.all((out > 0) & (out < 1))


def test_sam_zero_input_zero_final_convs():
    sam = SpatialAttention(AttentionConfig(C), make_rng(0))
    for br in (sam.b1, sam.b3):
        br.layers[-1].params["w"][:] = 0
        br.layers[-1].params["b"][:] = 0
    assert np.all(sam.forward(np.zeros((2, C, 4, 4))) == 0.5)


def test_sam_vs_composed_oracle(x):
    sam = SpatialAttention(AttentionConfig(C), make_rng(2))
    assert np.max(np.abs(sam.forward(x) - sam_oracle(sam, x))) < 1e-12


# -- dual attention ----------------------------------------------------------

def _saturate(dam, logit):
    w1 = dam.cam.mlp.layers[-1]
    w1.params["w"][:] = 0
    w1.params["b"][:] = logit
    for br in (dam.sam.b1, dam.sam.b3):
        br.layers[-1].params["w"][:] = 0
        br.layers[-1].params["b"][:] = np.sqrt(abs(logit))
    if logit < 0:
        dam.sam.b3.layers[-1].params["b"][:] *= -1


def test_dam_saturated_maps(x):
    dam = DualAttention(AttentionConfig(C), make_rng(0))
    _saturate(dam, 50.0)
    assert np.array_equal(dam.forward(x), 2 * x)
    _saturate(dam, -50.0)
    assert np.allclose(dam.forward(x), x, rtol=0, atol=1e-20)


@pytest.mark.parametrize("mode", ["broadcast", "concat"])
def test_dam_preserves_dims(mode, x):
    dam = DualAttention(AttentionConfig(C, mode=mode), make_rng(0))
    assert dam.forward(x).shape == x.shape


def test_dam_vs_composed_oracle():
    # 2x3x4x4 input; C=3 is below r so the hidden width floors at 1
    x = make_rng(4).standard_normal((2, 3, 4, 4))
    dam = DualAttention(AttentionConfig(3), make_rng(3))
    want = cam_oracle(dam.cam, x) * x * sam_oracle(dam.sam, x) + x
    assert np.max(np.abs(dam.forward(x) - want)) < 1e-12
    a1, a2 = dam.maps
    assert a1.shape == (2, 3, 1, 1) and a2.shape == (2, 1, 4, 4)


@given(st.integers(0, 1000))
def test_attention_batch_equivariance(seed):
    r = make_rng(seed)
    x = r.standard_normal((4, C, 4, 4))
    perm = r.permutation(4)
    for layer in (DualAttention(AttentionConfig(C), r), DualAttention(AttentionConfig(C, mode="concat"), r),
                  ECA(AttentionConfig(C), r)):
        assert np.allclose(layer.forward(x)[perm], layer.forward(x[perm]), atol=1e-13, rtol=0)


# -- ECA ---------------------------------------------------------------------

def test_eca_single_channel():
    eca = ECA(AttentionConfig(1), make_rng(0))
    x = make_rng(1).standard_normal((2, 1, 3, 3))
    w, b = eca.params["w"][eca.k // 2], eca.params["b"][0]
    want = x * _sig(w * x.mean(axis=(2, 3), keepdims=True) + b)
    assert np.max(np.abs(eca.forward(x) - want)) < 1e-15


def test_eca_vs_channel_loop(x):
    eca = ECA(AttentionConfig(C), make_rng(5))
    eca.params["b"][:] = 0.3
    out = eca.forward(x)
    assert out.shape == x.shape
    assert np.max(np.abs(out - oracles.eca(x, eca.params["w"], eca.params["b"][0]))) < 1e-12


@pytest.mark.parametrize("c,k", [(1, 3), (8, 3), (16, 3), (64, 3), (256, 5), (512, 5), (1024, 5)])
def test_eca_adaptive_kernel(c, k):
    assert eca_kernel_size(c) == k


# -- shortcut embedding ------------------------------------------------------

def test_shortcut_embed_identities(x):
    r = make_rng(0)
    block = r.standard_normal(x.shape)
    assert shortcut_attention_embed(block, x, None) is block
    zero_branch = shortcut_attention_embed(block, np.zeros_like(x), ECA(AttentionConfig(C), r))
    assert np.array_equal(zero_branch, block)


def test_shortcut_embed_sum_and_sign(x):
    eca = ECA(AttentionConfig(C), make_rng(1))
    block = -np.abs(make_rng(2).standard_normal(x.shape))
    out = shortcut_attention_embed(block, x, eca)
    gate = oracles.eca(x, eca.params["w"], eca.params["b"][0])
    assert np.max(np.abs(out - (block + gate))) < 1e-12
    assert out.min() < 0


# -- gradients and config ----------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda r: ChannelAttention(AttentionConfig(C), r),
    lambda r: SpatialAttention(AttentionConfig(C), r),
    lambda r: DualAttention(AttentionConfig(C), r),
    lambda r: DualAttention(AttentionConfig(C, mode="concat"), r),
    lambda r: ECA(AttentionConfig(C), r),
    lambda r: ECA(AttentionConfig(C, eca_kernel=5), r),
])
def test_attention_gradients(make, x):
    assert grad_check(make(make_rng(8)), x).max_rel_err < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        AttentionConfig(20, reduction=8)
    with pytest.raises(ValueError):
        AttentionConfig(16, eca_kernel=4)
    with pytest.raises(ValueError):
        AttentionConfig(16, mode="sum")
    assert AttentionConfig(64).hidden == 8
