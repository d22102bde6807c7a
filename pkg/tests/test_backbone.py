import numpy as np
import pytest

from dchanet import tensor as T
from dchanet.backbone import (
    BackboneConfig,
    backbone_forward,
    bottleneck_forward,
    build_backbone,
    count_parameters,
)
from dchanet.errors import ConfigError, DimensionError
from dchanet.gradcheck import check_gradients


def expected_count(cfg):
    """Parameter count worked out from the config alone."""
    def conv(c_out, c_in, k):
        return c_out * c_in * k * k + c_out + 2 * c_out  # weights, bias, norm pair

    n = conv(cfg.stem_channels, cfg.in_channels, cfg.stem_kernel)
    c_in = cfg.stem_channels
    for s, m in enumerate(cfg.stage_channel_multipliers):
        mid = cfg.stem_channels * m
        out = 4 * mid
        for b in range(cfg.bottlenecks_per_stage[s]):
            n += conv(mid, c_in, 1) + conv(mid, mid, 3) + conv(out, mid, 1)
            stride = 2 if (s > 0 and b == 0) else 1
            if stride != 1 or c_in != out:
                n += conv(out, c_in, 1)
            c_in = out
    return n


def test_toy_parameter_count():
    cfg = BackboneConfig.toy()
    n = count_parameters(build_backbone(cfg, 0))
    assert n == expected_count(cfg)
    assert n < 100_000


def test_full_scale_config_channels():
    cfg = BackboneConfig.full_scale()
    cfg.validate()
    assert cfg.stage_widths()[-1][1] == 1024 == cfg.feature_channels
    assert sum(cfg.bottlenecks_per_stage) == 27


def test_toy_output_shape():
    p = build_backbone(BackboneConfig.toy(), 0)
    out = backbone_forward(np.random.default_rng(0).random((1, 64, 64)), p)
    assert out.shape == (32, 8, 8)


def test_overall_stride_eight_at_256():
    p = build_backbone(BackboneConfig.toy(), 0)
    assert backbone_forward(np.zeros((1, 256, 256)), p).shape == (32, 32, 32)


def test_rectangular_input():
    p = build_backbone(BackboneConfig.toy(), 0)
    assert backbone_forward(np.zeros((1, 16, 40)), p).shape == (32, 2, 5)


@pytest.mark.parametrize("shape", [(1, 60, 64), (1, 64, 12), (2, 64, 64), (64, 64)])
def test_bad_input(shape):
    p = build_backbone(BackboneConfig.toy(), 0)
    with pytest.raises(DimensionError):
        backbone_forward(np.zeros(shape), p)


def test_invalid_config():
    with pytest.raises(ConfigError):
        build_backbone(BackboneConfig(feature_channels=64), 0)
    with pytest.raises(ConfigError):
        build_backbone(BackboneConfig(downsample_strides=[2, 2, 1]), 0)


def test_deterministic_init():
    a = build_backbone(BackboneConfig.toy(), 3)
    b = build_backbone(BackboneConfig.toy(), 3)
    c = build_backbone(BackboneConfig.toy(), 4)
    assert list(a.params) == list(b.params)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a.params)
    assert not np.array_equal(a["stem.conv.w"].data, c["stem.conv.w"].data)


def test_identity_bottleneck_passes_input_through():
    cfg = BackboneConfig(bottlenecks_per_stage=[2, 1, 1])
    p = build_backbone(cfg, 0)
    assert "stage1.block1.proj.w" not in p.params
    p["stage1.block1.norm3.scale"].data[:] = 0.0
    p["stage1.block1.norm3.offset"].data[:] = 0.0
    x = np.random.default_rng(1).random((32, 8, 8))  # non-negative, as after a ReLU
    np.testing.assert_array_equal(bottleneck_forward(T.Tensor(x), p, "stage1.block1", 1).data, x)


def test_backbone_gradient_check():
    cfg = BackboneConfig(stem_channels=2, feature_channels=8, stem_kernel=3)
    p = build_backbone(cfg, 0)
    names = list(p.params)
    rng = np.random.default_rng(2)
    img = rng.random((1, 16, 16))
    arrays = [p[n].data + rng.normal(size=p[n].shape) * 0.05 for n in names]

    def build(*leaves):
        q = build_backbone(cfg, 0)
        for n, t in zip(names, leaves):
            q.params[n] = t
        out = backbone_forward(img, q)
        return T.mean(out * out)

    assert check_gradients(build, arrays) < 1e-3
