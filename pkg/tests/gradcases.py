"""Differentiable operations and layers with input shapes for gradient checks."""

import numpy as np

from dchanet import tensor as T
from dchanet.attention import (
    HybridAttentionModule,
    LocalRelationParams,
    NonLocalAttentionParams,
    hybrid_forward,
    local_relation_forward,
    nonlocal_attention_forward,
)
from dchanet.backbone import BackboneConfig, backbone_forward, build_backbone
from dchanet.losses import bce, dual_view_corr_loss


def _weights(shape, seed=99):
    return np.random.default_rng(seed).normal(size=shape)


def _weighted(out):
    return T.sum(out * _weights(out.shape))


def _local(f, qw, qb, kw, kb):
    return _weighted(local_relation_forward(f, LocalRelationParams(qw, qb, kw, kb, 3)))


def _non_local(f, qw, qb, kw, kb):
    return _weighted(nonlocal_attention_forward(f, NonLocalAttentionParams(qw, qb, kw, kb)))


def _hybrid(f, *p):
    m = HybridAttentionModule(LocalRelationParams(*p[:4], 3), NonLocalAttentionParams(*p[4:]))
    return T.mean(hybrid_forward(f, m))


_TINY = BackboneConfig(stem_channels=2, feature_channels=8, stem_kernel=3)
_TINY_NAMES = list(build_backbone(_TINY, 0).params)
_TINY_SHAPES = [build_backbone(_TINY, 0)[n].shape for n in _TINY_NAMES]


# a pixel feeds a whole normalised channel, so image probes cross many ReLU
# corners at once; input gradients are covered by the conv2d cases and this
# case checks every parameter instead
_IMG = np.random.default_rng(123).random((1, 16, 16))


def _backbone(*leaves):
    p = build_backbone(_TINY, 0)
    p.params.update(zip(_TINY_NAMES, leaves))
    out = backbone_forward(_IMG, p)
    return T.mean(out * out)


_PROJ = [(4, 4, 1, 1), (4,), (4, 4, 1, 1), (4,)]

GRAD_CASES = {
    "add": (lambda a, b: _weighted(a + b), [(3, 4), (4,)]),
    "sub": (lambda a, b: _weighted(a - b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: _weighted(a * b), [(3, 4), (3, 4)]),
    "div": (lambda a, b: _weighted(a / (T.exp(b) + 1.0)), [(3, 4), (3, 4)]),
    "relu": (lambda a: _weighted(T.relu(a)), [(4, 5)]),
    "sigmoid": (lambda a: _weighted(T.sigmoid(a * 3.0)), [(4, 5)]),
    "exp_log": (lambda a: _weighted(T.log(T.exp(a) + 2.0)), [(4, 5)]),
    "sqrt": (lambda a: _weighted(T.sqrt(a * a + 1.0)), [(4, 5)]),
    "reshape_transpose": (lambda a: _weighted(T.transpose(T.reshape(a, (5, 2, 2)), (2, 0, 1))), [(4, 5)]),
    "sum_mean_axis": (lambda a: _weighted(T.sum(a, axis=1)) + _weighted(T.mean(a, axis=0, keepdims=True)), [(4, 5)]),
    "matmul": (lambda a, b: _weighted(a @ b), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: _weighted(T.matmul(a, b)), [(2, 3, 4), (2, 4, 2)]),
    "softmax": (lambda a: _weighted(T.softmax_lastdim(a)), [(3, 6)]),
    "conv2d_s1": (lambda x, k, b: _weighted(T.conv2d(x, k, b, 1, 1)), [(2, 5, 6), (3, 2, 3, 3), (3,)]),
    "conv2d_s2": (lambda x, k, b: _weighted(T.conv2d(x, k, b, 2, 3)), [(2, 8, 8), (3, 2, 7, 7), (3,)]),
    "conv2d_1x1_s2": (lambda x, k, b: _weighted(T.conv2d(x, k, b, 2, 0)), [(3, 6, 6), (2, 3, 1, 1), (2,)]),
    "patches_k3": (lambda x: _weighted(T.extract_patches(x, 3, 3)), [(2, 4, 5)]),
    "patches_row": (lambda x: _weighted(T.extract_patches(x, 1, 5)), [(2, 4, 5)]),
    "pack": (lambda v: _weighted(T.pack(v, 3, 4)), [(12, 2)]),
    "global_avg_pool": (lambda x: _weighted(T.global_avg_pool(x)), [(3, 4, 5)]),
    "instance_norm": (lambda x, s, o: _weighted(T.instance_norm(x, s, o)), [(3, 4, 5), (3,), (3,)]),
    "getrow_concat": (lambda x: _weighted(T.concat([T.getrow(x, 1), T.getrow(x, 3)], axis=0)), [(2, 4, 5)]),
    "clip": (lambda x: _weighted(T.clip(x, -0.5, 0.7)), [(4, 5)]),
    # composite layers
    "local_relation": (_local, [(4, 5, 6)] + _PROJ),
    "non_local": (_non_local, [(4, 5, 6)] + _PROJ),
    "hybrid": (_hybrid, [(4, 6, 6)] + _PROJ + _PROJ),
    "corr_loss": (lambda a, b: dual_view_corr_loss(a, b), [(4, 8, 8), (4, 8, 8)]),
    "bce_sigmoid": (lambda z: bce(T.sigmoid(T.sum(z)), 1) + bce(T.sigmoid(T.mean(z)), 0), [(5,)]),
    "backbone": (_backbone, _TINY_SHAPES),
}


# cases whose inputs cannot all be kept away from ReLU corners
KINKED = {"backbone"}


def case_arrays(name, seed):
    """The build function and seeded inputs for one case, nudged off kinks."""
    build, shapes = GRAD_CASES[name]
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    if name == "clip":
        arrays[0] = np.where(np.abs(arrays[0] + 0.5) < 1e-2, 0.0, arrays[0])
        arrays[0] = np.where(np.abs(arrays[0] - 0.7) < 1e-2, 0.0, arrays[0])
    if name == "relu":
        arrays[0] = np.where(np.abs(arrays[0]) < 1e-2, 0.1, arrays[0])
    if name in ("local_relation", "non_local", "hybrid"):
        arrays[1:] = [a * 0.5 for a in arrays[1:]]
    if name == "backbone":
        base = build_backbone(_TINY, seed)
        arrays = [base[n].data + 0.05 * rng.normal(size=base[n].shape) for n in _TINY_NAMES]
    return build, arrays
