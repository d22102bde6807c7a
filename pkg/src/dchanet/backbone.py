"""Truncated residual feature extractor with an overall spatial stride of 8.

A 7x7 stem followed by three stages of 1x1 -> 3x3 -> 1x1 bottlenecks.  There
is no max-pooling layer; the three stride-2 reductions sit in the stem and in
the first bottleneck of stages two and three.  Normalisation is per channel
over spatial positions (instance style) because batch statistics are useless
at the batch sizes this package trains with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

EXPANSION = 4


@dataclass
class BackboneConfig:
    in_channels: int = 1
    stem_channels: int = 8
    stage_channel_multipliers: list = field(default_factory=lambda: [1, 1, 1])
    bottlenecks_per_stage: list = field(default_factory=lambda: [1, 1, 1])
    downsample_strides: list = field(default_factory=lambda: [2, 2, 2])
    feature_channels: int = 32
    stem_kernel: int = 7

    @classmethod
    def toy(cls):
        return cls()

    @classmethod
    def full_scale(cls):
        # ResNet-101 up to conv4_x, minus its last three bottlenecks
        return cls(
            in_channels=3,
            stem_channels=64,
            stage_channel_multipliers=[1, 2, 4],
            bottlenecks_per_stage=[3, 4, 20],
            feature_channels=1024,
        )

    def stage_widths(self):
        """(mid, out) channel pairs for each stage."""
        return [(self.stem_channels * m, self.stem_channels * m * EXPANSION)
                for m in self.stage_channel_multipliers]

    def stage_strides(self):
        return [1, self.downsample_strides[1], self.downsample_strides[2]]

    def validate(self):
        if list(self.downsample_strides) != [2, 2, 2]:
            raise ConfigError(f"expected exactly three stride-2 reductions, got {self.downsample_strides}")
        if len(self.stage_channel_multipliers) != 3 or len(self.bottlenecks_per_stage) != 3:
            raise ConfigError("backbone needs exactly three stages")
        if any(n < 1 for n in self.bottlenecks_per_stage):
            raise ConfigError("every stage needs at least one bottleneck")
        if min(self.in_channels, self.stem_channels, *self.stage_channel_multipliers) < 1:
            raise ConfigError("channel counts must be positive")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ConfigError(f"stem kernel must be odd, got {self.stem_kernel}")
        last = self.stage_widths()[-1][1]
        if last != self.feature_channels:
            raise ConfigError(
                f"feature_channels={self.feature_channels} but the last stage produces {last}"
            )


@dataclass
class BackboneParams:
    cfg: BackboneConfig
    params: dict  # path -> Tensor, insertion order is the canonical order

    def named_parameters(self, prefix=""):
        return {prefix + k: v for k, v in self.params.items()}

    def __getitem__(self, path):
        return self.params[path]


def _conv(params, rng, path, c_out, c_in, k):
    fan_in = c_in * k * k
    w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
    params[path + ".w"] = Tensor(w, requires_grad=True)
    params[path + ".b"] = Tensor(np.zeros(c_out), requires_grad=True)


def _norm(params, path, c):
    params[path + ".scale"] = Tensor(np.ones(c), requires_grad=True)
    params[path + ".offset"] = Tensor(np.zeros(c), requires_grad=True)


def _block_paths(cfg):
    """Yield (path, c_in, mid, c_out, stride) for every bottleneck."""
    c_in = cfg.stem_channels
    for s, ((mid, out), n, stride) in enumerate(
        zip(cfg.stage_widths(), cfg.bottlenecks_per_stage, cfg.stage_strides()), start=1
    ):
        for b in range(n):
            yield f"stage{s}.block{b}", c_in, mid, out, stride if b == 0 else 1
            c_in = out


def build_backbone(cfg, seed):
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    _conv(params, rng, "stem.conv", cfg.stem_channels, cfg.in_channels, cfg.stem_kernel)
    _norm(params, "stem.norm", cfg.stem_channels)
    for path, c_in, mid, out, stride in _block_paths(cfg):
        _conv(params, rng, path + ".conv1", mid, c_in, 1)
        _norm(params, path + ".norm1", mid)
        _conv(params, rng, path + ".conv2", mid, mid, 3)
        _norm(params, path + ".norm2", mid)
        _conv(params, rng, path + ".conv3", out, mid, 1)
        _norm(params, path + ".norm3", out)
        if stride != 1 or c_in != out:
            _conv(params, rng, path + ".proj", out, c_in, 1)
            _norm(params, path + ".proj_norm", out)
    return BackboneParams(cfg, params)


def count_parameters(p):
    return int(sum(t.size for t in p.params.values()))


def _conv_norm(x, p, conv, norm, stride=1, pad=0, act=True):
    y = T.conv2d(x, p[conv + ".w"], p[conv + ".b"], stride, pad)
    y = T.instance_norm(y, p[norm + ".scale"], p[norm + ".offset"])
    return T.relu(y) if act else y


def bottleneck_forward(x, p, path, stride):
    y = _conv_norm(x, p, path + ".conv1", path + ".norm1")
    y = _conv_norm(y, p, path + ".conv2", path + ".norm2", stride=stride, pad=1)
    y = _conv_norm(y, p, path + ".conv3", path + ".norm3", act=False)
    if path + ".proj.w" in p.params:
        skip = _conv_norm(x, p, path + ".proj", path + ".proj_norm", stride=stride, act=False)
    else:
        skip = x
    return T.relu(y + skip)


def backbone_forward(img, p):
    """Map a ``C_in x H x W`` image to a ``C x H/8 x W/8`` feature map."""
    img = T.tensor(img)
    cfg = p.cfg
    if img.ndim != 3 or img.shape[0] != cfg.in_channels:
        raise DimensionError(f"backbone expects {cfg.in_channels} x H x W input, got {img.shape}")
    if img.shape[1] % 8 or img.shape[2] % 8:
        raise DimensionError(f"input size {img.shape[1]} x {img.shape[2]} is not divisible by 8")
    x = _conv_norm(img, p, "stem.conv", "stem.norm",
                   stride=cfg.downsample_strides[0], pad=cfg.stem_kernel // 2)
    for path, _, _, _, stride in _block_paths(cfg):
        x = bottleneck_forward(x, p, path, stride)
    return x
