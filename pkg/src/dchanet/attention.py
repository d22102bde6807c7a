"""Local relation, row-wise non-local attention and their hybrid composition.

Both blocks follow the same recipe: 1x1-projected query and key pools, raw
(unprojected) values, scaled dot-product weights normalised with a softmax,
and an additive skip connection.  The local block attends over a zero-padded
``k x k`` neighbourhood of every pixel; the non-local block attends over the
whole row the pixel belongs to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import DimensionError, WindowError
from .tensor import Tensor


@dataclass
class LocalRelationParams:
    query_w: Tensor  # C x C x 1 x 1
    query_b: Tensor
    key_w: Tensor
    key_b: Tensor
    k: int = 3

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise WindowError(f"local window size must be odd and >= 1, got {self.k}")
        _check_projection(self.query_w, self.query_b, "query")
        _check_projection(self.key_w, self.key_b, "key")
        if self.key_w.shape != self.query_w.shape:
            raise DimensionError("query and key projections must have the same shape")

    @property
    def channels(self):
        return self.query_w.shape[0]

    def named_parameters(self, prefix=""):
        return {
            f"{prefix}query_w": self.query_w,
            f"{prefix}query_b": self.query_b,
            f"{prefix}key_w": self.key_w,
            f"{prefix}key_b": self.key_b,
        }


@dataclass
class NonLocalAttentionParams:
    query_w: Tensor
    query_b: Tensor
    key_w: Tensor
    key_b: Tensor

    def __post_init__(self):
        _check_projection(self.query_w, self.query_b, "query")
        _check_projection(self.key_w, self.key_b, "key")
        if self.key_w.shape != self.query_w.shape:
            raise DimensionError("query and key projections must have the same shape")

    @property
    def channels(self):
        return self.query_w.shape[0]

    def named_parameters(self, prefix=""):
        return {
            f"{prefix}query_w": self.query_w,
            f"{prefix}query_b": self.query_b,
            f"{prefix}key_w": self.key_w,
            f"{prefix}key_b": self.key_b,
        }


@dataclass
class HybridAttentionModule:
    """Local block followed by the non-local block.

    Either sub-block may be ``None`` to build the single-attention ablations;
    a missing block is skipped (identity), not replaced by a doubling skip.
    """

    local: Optional[LocalRelationParams]
    non_local: Optional[NonLocalAttentionParams]

    def __post_init__(self):
        if self.local is not None and self.non_local is not None:
            if self.local.channels != self.non_local.channels:
                raise DimensionError(
                    f"local block has {self.local.channels} channels, "
                    f"non-local block has {self.non_local.channels}"
                )

    def named_parameters(self, prefix=""):
        out = {}
        if self.local is not None:
            out.update(self.local.named_parameters(prefix + "local."))
        if self.non_local is not None:
            out.update(self.non_local.named_parameters(prefix + "non_local."))
        return out


def _check_projection(w, b, name):
    if w.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[0] != w.shape[1]:
        raise DimensionError(f"{name} projection must be C x C x 1 x 1, got {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"{name} bias must have shape ({w.shape[0]},), got {b.shape}")


def _projection(rng, c, zero=False):
    if zero:
        w = np.zeros((c, c, 1, 1))
    else:
        bound = math.sqrt(1.0 / c)
        w = rng.uniform(-bound, bound, size=(c, c, 1, 1))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(c), requires_grad=True)


def init_local_relation(channels, rng, k=3, zero=False):
    qw, qb = _projection(rng, channels, zero)
    kw, kb = _projection(rng, channels, zero)
    return LocalRelationParams(qw, qb, kw, kb, k)


def init_non_local(channels, rng, zero=False):
    qw, qb = _projection(rng, channels, zero)
    kw, kb = _projection(rng, channels, zero)
    return NonLocalAttentionParams(qw, qb, kw, kb)


def init_hybrid(channels, rng, k=3, use_local=True, use_non_local=True):
    local = init_local_relation(channels, rng, k) if use_local else None
    non_local = init_non_local(channels, rng) if use_non_local else None
    return HybridAttentionModule(local, non_local)


def _check_input(feat, channels, block):
    if feat.ndim != 3:
        raise DimensionError(f"{block} expects a C x H x W map, got {feat.shape}")
    if feat.shape[0] != channels:
        raise DimensionError(f"{block}: map has {feat.shape[0]} channels, parameters expect {channels}")


def local_relation_weights(feat, p):
    """Per-pixel attention over the ``k x k`` window, shape ``(H*W) x 1 x k*k``."""
    feat = T.tensor(feat)
    _check_input(feat, p.channels, "local relation block")
    c, h, w = feat.shape
    queries = T.conv2d(feat, p.query_w, p.query_b)
    keys = T.conv2d(feat, p.key_w, p.key_b)
    q = T.reshape(T.transpose(T.reshape(queries, (c, h * w))), (h * w, 1, c))
    k_win = T.extract_patches(keys, p.k, p.k)  # HW x C x k^2
    return T.softmax_lastdim(T.matmul(q, k_win) / math.sqrt(c))


def local_relation_forward(feat, p):
    """Enrich every pixel with its ``k x k`` neighbourhood, plus a skip."""
    feat = T.tensor(feat)
    attn = local_relation_weights(feat, p)
    c, h, w = feat.shape
    values = T.extract_patches(feat, p.k, p.k)  # HW x C x k^2
    related = T.matmul(attn, T.transpose(values, (0, 2, 1)))  # HW x 1 x C
    return T.pack(T.reshape(related, (h * w, c)), h, w) + feat


def non_local_weights(feat, p):
    """Row-wise attention, shape ``H x W x W``; rows of each slice sum to 1."""
    feat = T.tensor(feat)
    _check_input(feat, p.channels, "non-local block")
    c, h, w = feat.shape
    queries = T.extract_patches(T.conv2d(feat, p.query_w, p.query_b), 1, w)  # H x C x W
    keys = T.extract_patches(T.conv2d(feat, p.key_w, p.key_b), 1, w)
    logits = T.matmul(T.transpose(queries, (0, 2, 1)), keys) / math.sqrt(c)
    return T.softmax_lastdim(logits)


def nonlocal_attention_forward(feat, p):
    """Relate every pixel to all pixels of its own row, plus a skip."""
    feat = T.tensor(feat)
    attn = non_local_weights(feat, p)
    c, h, w = feat.shape
    values = T.extract_patches(feat, 1, w)  # H x C x W
    related = T.matmul(attn, T.transpose(values, (0, 2, 1)))  # H x W x C
    return T.pack(T.transpose(related, (0, 2, 1)), h, w) + feat


def hybrid_forward(feat, m):
    out = T.tensor(feat)
    if m.local is not None:
        out = local_relation_forward(out, m.local)
    if m.non_local is not None:
        out = nonlocal_attention_forward(out, m.non_local)
    return out
