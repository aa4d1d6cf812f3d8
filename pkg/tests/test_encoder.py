import numpy as np
import pytest

from cxreport import autodiff as ad
from cxreport.encoder import Encoder, EncoderConfig, output_shape, set_trainable


def desk_encoder(seed=0):
    return Encoder.init(EncoderConfig.desk(), seed=seed)


def test_desk_output_shape_matches_stride_arithmetic():
    cfg = EncoderConfig.desk()
    # stem 3x3/s2/p1: 64 -> 32; two 2x pools: 32 -> 16 -> 8
    # channels: 16 -> +16 -> 32 -> /2 -> 16 -> +16 -> 32 -> /2 -> 16 -> +16 -> 32
    side = (64 + 2 - 3) // 2 + 1
    channels = 16
    for b in range(1, 4):
        channels += 2 * 8
        if b < 3:
            channels //= 2
            side //= 2
    assert (channels, side * side) == (32, 64)
    assert output_shape(cfg) == (32, 64, (8, 8))

    enc = desk_encoder()
    feat = enc.forward(np.random.default_rng(0).random((64, 64)))
    assert feat.V.shape == (32, 64)
    assert feat.V_gav.shape == (32,)
    assert feat.grid == (8, 8)


def test_dense_block_channel_arithmetic():
    cfg = EncoderConfig(n_blocks=2, layers_per_block=3, growth_rate=4, input_size=32, frozen_blocks=0)
    enc = Encoder.init(cfg, seed=1)
    c0 = 8  # stem channels = 2 * growth
    # block1 output = c0 + 3*4 = 20, transition halves to 10, block2 -> 22
    assert enc.params["block1.layer2.conv"].shape == (4, c0 + 2 * 4, 3, 3)
    assert enc.params["trans1.conv"].shape == (10, 20, 1, 1)
    c, p, _ = output_shape(cfg)
    assert c == 10 + 3 * 4


def test_zero_kernels_give_constant_channels():
    enc = desk_encoder()
    for name, param in enc.params.items():
        if name.endswith(".conv") or name == "stem.conv":
            param.data[:] = 0.0
    feat = enc.forward(np.random.default_rng(3).random((64, 64)))
    per_channel_spread = feat.V.data.max(axis=1) - feat.V.data.min(axis=1)
    assert np.all(per_channel_spread == 0.0)
    assert np.array_equal(feat.V_gav.data, feat.V.data[:, 0])


def test_global_average_is_exact_row_mean():
    enc = desk_encoder(seed=5)
    feat = enc.forward(np.random.default_rng(5).random((64, 64)))
    assert np.allclose(feat.V_gav.data, feat.V.data.mean(axis=1), atol=1e-12, rtol=0)


def test_rejects_wrong_input_size():
    enc = desk_encoder()
    with pytest.raises(ValueError):
        enc.forward(np.zeros((32, 32)))


def test_set_trainable_partitions():
    enc = desk_encoder()
    names = enc.params

    part = set_trainable(names, frozen_blocks=0, n_blocks=3)
    assert part["frozen"] == []
    assert set(part["trainable"]) == set(names)

    part = set_trainable(names, frozen_blocks=3, n_blocks=3)
    assert set(part["trainable"]) == {"final_norm.gamma", "final_norm.beta"}

    part = set_trainable(names, frozen_blocks=2, n_blocks=3)
    assert set(part["frozen"]) | set(part["trainable"]) == set(names)
    assert not set(part["frozen"]) & set(part["trainable"])
    assert "block1.layer0.conv" in part["frozen"]
    assert "stem.conv" in part["frozen"]
    assert "trans2.conv" in part["frozen"]
    assert "block3.layer0.conv" in part["trainable"]

    with pytest.raises(ValueError):
        set_trainable(names, frozen_blocks=4, n_blocks=3)


def test_gradients_reach_every_trainable_parameter():
    for seed in range(10):
        cfg = EncoderConfig(n_blocks=2, layers_per_block=1, growth_rate=4, input_size=16, frozen_blocks=0)
        enc = Encoder.init(cfg, seed=seed)
        feat = enc.forward(np.random.default_rng(seed).random((16, 16)))
        proj = np.random.default_rng(seed + 100).normal(size=feat.V.shape)
        loss = ad.reduce_sum(ad.mul(feat.V, ad.Tensor(proj)))
        loss.backward()
        for name, param in enc.params.items():
            assert param.grad is not None, name
            assert np.any(param.grad != 0.0), name


def test_running_stats_update_only_when_training_and_unfrozen():
    enc = desk_encoder()
    img = np.random.default_rng(9).random((64, 64))

    frozen_before = enc.buffers["block1.layer0.norm.mean"].copy()
    trainable_before = enc.buffers["block3.layer0.norm.mean"].copy()
    enc.forward(img, training=False)
    assert np.array_equal(enc.buffers["block3.layer0.norm.mean"], trainable_before)

    enc.forward(img, training=True)
    assert np.array_equal(enc.buffers["block1.layer0.norm.mean"], frozen_before)
    assert not np.array_equal(enc.buffers["block3.layer0.norm.mean"], trainable_before)


def test_forward_is_deterministic():
    enc = desk_encoder(seed=11)
    img = np.random.default_rng(11).random((64, 64))
    a = enc.forward(img).V.data
    b = enc.forward(img).V.data
    assert np.array_equal(a, b)
