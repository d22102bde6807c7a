"""Dual-view model: shared backbone, shared hybrid attention, two heads."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import tensor as T
from .attention import HybridAttentionModule, hybrid_forward, init_hybrid
from .backbone import BackboneConfig, BackboneParams, backbone_forward, build_backbone
from .losses import bce, dual_view_corr_loss, total_loss
from .tensor import Tensor


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    k: int = 3
    n_hybrid: int = 1
    use_local: bool = True
    use_non_local: bool = True
    use_corr: bool = True
    seed: int = 0

    @classmethod
    def variant(cls, name, **kw):
        """Ablation presets: ``full``, ``corr_only``, ``baseline``, ``attention_only``,
        ``corr_local`` and ``corr_non_local``."""
        flags = {
            "full": (True, True, True),
            "corr_only": (False, False, True),
            "baseline": (False, False, False),
            "attention_only": (True, True, False),
            "corr_local": (True, False, True),
            "corr_non_local": (False, True, True),
        }[name]
        return cls(use_local=flags[0], use_non_local=flags[1], use_corr=flags[2], **kw)

    @property
    def has_attention(self):
        return self.n_hybrid > 0 and (self.use_local or self.use_non_local)


@dataclass
class Head:
    w: Tensor  # (C,)
    b: Tensor  # ()

    def named_parameters(self, prefix=""):
        return {prefix + "w": self.w, prefix + "b": self.b}


@dataclass
class DchaModel:
    cfg: ModelConfig
    backbone: BackboneParams
    hybrid: List[HybridAttentionModule]
    head_cc: Head
    head_mlo: Head

    def named_parameters(self):
        out = dict(self.backbone.named_parameters("backbone."))
        for i, m in enumerate(self.hybrid):
            out.update(m.named_parameters(f"hybrid{i}."))
        out.update(self.head_cc.named_parameters("head_cc."))
        out.update(self.head_mlo.named_parameters("head_mlo."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())


@dataclass
class ForwardResult:
    p_cc: Tensor
    p_mlo: Tensor
    r_cc: Tensor
    r_mlo: Tensor
    f_cc: Tensor
    f_mlo: Tensor


def _init_head(rng, c):
    bound = math.sqrt(1.0 / c)
    return Head(Tensor(rng.uniform(-bound, bound, size=c), requires_grad=True),
                Tensor(np.array(0.0), requires_grad=True))


def build_model(cfg=None):
    cfg = cfg or ModelConfig()
    backbone = build_backbone(cfg.backbone, cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    c = cfg.backbone.feature_channels
    hybrid = []
    if cfg.has_attention:
        hybrid = [init_hybrid(c, rng, cfg.k, cfg.use_local, cfg.use_non_local) for _ in range(cfg.n_hybrid)]
    return DchaModel(cfg, backbone, hybrid, _init_head(rng, c), _init_head(rng, c))


def as_input(img, in_channels):
    """Lift an ``H x W`` image to ``C_in x H x W``."""
    img = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[None], in_channels, axis=0)
    return Tensor(img)


def reinvent(img, model):
    """Feature map ``F`` and reinvented map ``R`` for one view."""
    f = backbone_forward(as_input(img, model.cfg.backbone.in_channels), model.backbone)
    r = f
    for m in model.hybrid:
        r = hybrid_forward(r, m)
    return f, r


def head_forward(r, head):
    return T.sigmoid(T.sum(head.w * T.global_avg_pool(r)) + head.b)


def model_forward(img_cc, img_mlo, model):
    f_cc, r_cc = reinvent(img_cc, model)
    f_mlo, r_mlo = reinvent(img_mlo, model)
    return ForwardResult(head_forward(r_cc, model.head_cc), head_forward(r_mlo, model.head_mlo),
                         r_cc, r_mlo, f_cc, f_mlo)


def case_forward(case, model):
    return model_forward(case.img_cc, case.img_mlo, model)


def case_loss(case, model, out: Optional[ForwardResult] = None):
    """Loss breakdown for one case; the correlation term follows ``cfg.use_corr``."""
    out = out or case_forward(case, model)
    corr = dual_view_corr_loss(out.r_cc, out.r_mlo) if model.cfg.use_corr else None
    return total_loss(corr, bce(out.p_cc, case.label), bce(out.p_mlo, case.label))
