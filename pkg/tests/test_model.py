"""Model assembly: config validation, encoder taps, U-Net wiring."""

import numpy as np
import pytest

from mxrunet.errors import ConfigError, DimensionError
from mxrunet.model import (
    Encoder, ModelConfig, MXRUNet, build_mxresnet, build_unet, count_params,
)
from mxrunet.tensor import Tensor, backward, no_grad


def small_config(depth=18, width=0.125, **kw):
    return ModelConfig(encoder_depth=depth, width_multiplier=width, **kw)


def test_config_defaults_and_validation():
    config = ModelConfig()
    assert (config.encoder_depth, config.in_channels, config.out_channels) \
        == (50, 3, 31)
    config.validate()
    for bad in (ModelConfig(encoder_depth=26),
                ModelConfig(in_channels=0),
                ModelConfig(out_channels=0),
                ModelConfig(width_multiplier=0.0),
                ModelConfig(width_multiplier=0.01)):
        with pytest.raises(ConfigError):
            bad.validate()


@pytest.mark.parametrize("depth,blocks", [(18, (2, 2, 2, 2)),
                                          (34, (3, 4, 6, 3)),
                                          (50, (3, 4, 6, 3))])
def test_encoder_block_counts(depth, blocks):
    enc = build_mxresnet(depth, width_multiplier=0.125,
                         rng=np.random.default_rng(0))
    got = tuple(len(stage) for stage in enc.stages)
    assert got == blocks


def test_encoder_tap_channels_scale_with_width():
    enc = Encoder(18, width_multiplier=1.0, rng=np.random.default_rng(0))
    assert enc.tap_channels == [64, 64, 128, 256]
    enc50 = Encoder(50, width_multiplier=1.0, rng=np.random.default_rng(0))
    assert enc50.tap_channels == [64, 256, 512, 1024]
    half = Encoder(18, width_multiplier=0.5, rng=np.random.default_rng(0))
    assert half.tap_channels == [32, 32, 64, 128]


def test_encoder_tap_resolutions():
    enc = Encoder(18, width_multiplier=0.125, rng=np.random.default_rng(0))
    x = Tensor(np.zeros((1, 3, 64, 96), dtype=np.float32))
    with no_grad():
        bottom, taps = enc.forward_taps(x)
    assert [t.shape[2:] for t in taps] == [(32, 48), (16, 24), (8, 12), (4, 6)]
    assert bottom.shape[2:] == (2, 3)


def test_unet_forward_shape_and_determinism():
    model = build_unet(small_config(), seed=0)
    model.eval()
    x = np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32)
    with no_grad():
        a = model(Tensor(x)).data
        b = model(Tensor(x.copy())).data
    assert a.shape == (2, 31, 32, 32)
    assert np.array_equal(a, b)


def test_unet_same_seed_same_weights():
    m1 = build_unet(small_config(), seed=7)
    m2 = build_unet(small_config(), seed=7)
    for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
    m3 = build_unet(small_config(), seed=8)
    diffs = [not np.array_equal(p1.data, p3.data)
             for (_, p1), (_, p3) in zip(m1.named_parameters(),
                                         m3.named_parameters())]
    assert any(diffs)


def test_unet_rejects_bad_inputs():
    model = build_unet(small_config(), seed=0)
    with pytest.raises(DimensionError) as err:
        model(Tensor(np.zeros((1, 3, 70, 70), dtype=np.float32)))
    assert "96x96" in str(err.value)
    with pytest.raises(DimensionError):
        model(Tensor(np.zeros((1, 5, 32, 32), dtype=np.float32)))
    with pytest.raises(DimensionError):
        model(Tensor(np.zeros((3, 32, 32), dtype=np.float32)))


def test_attention_toggle_changes_param_count_only():
    with_sa = build_unet(small_config(), seed=0)
    without = build_unet(small_config(self_attention=False), seed=0)
    assert with_sa.num_params() > without.num_params()
    x = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
    with no_grad():
        assert without(x).shape == (1, 31, 32, 32)


def test_blur_toggles_do_not_change_shapes():
    model = build_unet(small_config(blur=False, final_blur=False), seed=0)
    x = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
    with no_grad():
        assert model(x).shape == (1, 31, 32, 32)


def test_output_channels_follow_config():
    model = build_unet(small_config(out_channels=7), seed=0)
    x = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
    with no_grad():
        assert model(x).shape == (1, 7, 32, 32)


def test_gradients_reach_every_parameter():
    model = build_unet(small_config(), seed=0)
    x = Tensor(np.random.default_rng(2).standard_normal((1, 3, 32, 32))
               .astype(np.float32))
    loss = model(x).mean()
    backward(loss)
    missing = [n for n, p in model.named_parameters() if p.grad is None]
    assert missing == []


def test_count_params_agrees_with_module_total():
    model = build_unet(small_config(), seed=0)
    assert count_params(model) == model.num_params()
    assert count_params(model) == sum(p.size for p in model.parameters())


def test_depth18_width1_param_count_pinned():
    model = build_unet(ModelConfig(encoder_depth=18), seed=0)
    assert model.num_params() == 31_769_899


def test_width_multiplier_monotone_in_params():
    counts = [build_unet(small_config(width=w), seed=0).num_params()
              for w in (0.125, 0.25, 0.5)]
    assert counts[0] < counts[1] < counts[2]
