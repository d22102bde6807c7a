"""Dual-view row correlation loss and per-view classification losses."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import DimensionError, LabelError

SIM_EPS = 1e-8
PROB_CLAMP = 1e-7


@dataclass
class ViewPrediction:
    p_cc: float
    p_mlo: float
    label: int


@dataclass
class LossBreakdown:
    corr: object
    clss_cc: object
    clss_mlo: object
    total: object

    def values(self):
        """Plain floats, in field order."""
        return tuple(float(getattr(x, "data", x)) for x in (self.corr, self.clss_cc, self.clss_mlo, self.total))


def cosine_sim(x, y, eps=SIM_EPS):
    """Mean-centred cosine similarity (Pearson form) of two vectors."""
    x, y = T.tensor(x), T.tensor(y)
    if x.ndim != 1 or y.ndim != 1:
        raise DimensionError(f"cosine_sim expects vectors, got {x.shape} and {y.shape}")
    if x.shape != y.shape:
        raise DimensionError(f"cosine_sim length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DimensionError("cosine_sim needs vectors of length >= 2")
    xc = x - T.mean(x)
    yc = y - T.mean(y)
    norm = T.sqrt(T.sum(xc * xc)) * T.sqrt(T.sum(yc * yc))
    return T.sum(xc * yc) / (norm + eps)


def row_similarities(r_cc, r_mlo, eps=SIM_EPS):
    """Similarity of every matched row pair, vectorised; returns an ``H`` tensor.

    Row ``i`` is the ``C x W`` slice at height ``i`` flattened to one vector.
    """
    r_cc, r_mlo = T.tensor(r_cc), T.tensor(r_mlo)
    if r_cc.shape != r_mlo.shape:
        raise DimensionError(f"feature maps differ in shape: {r_cc.shape} vs {r_mlo.shape}")
    if r_cc.ndim != 3:
        raise DimensionError(f"expected C x H x W maps, got {r_cc.shape}")
    c, h, w = r_cc.shape
    if c * w < 2:
        raise DimensionError("rows must hold at least two values")
    a = T.reshape(T.transpose(r_cc, (1, 0, 2)), (h, c * w))
    b = T.reshape(T.transpose(r_mlo, (1, 0, 2)), (h, c * w))
    ac = a - T.mean(a, axis=1, keepdims=True)
    bc = b - T.mean(b, axis=1, keepdims=True)
    num = T.sum(ac * bc, axis=1)
    den = T.sqrt(T.sum(ac * ac, axis=1)) * T.sqrt(T.sum(bc * bc, axis=1))
    return num / (den + eps)


def dual_view_corr_loss(r_cc, r_mlo, eps=SIM_EPS):
    """Negative mean over rows of the matched-row similarity; lies in [-1, 1]."""
    return -T.mean(row_similarities(r_cc, r_mlo, eps))


def bce(p, y):
    """Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7]."""
    if y not in (0, 1):
        raise LabelError(f"label must be 0 or 1, got {y!r}")
    p = T.clip(T.tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -T.log(p) if y == 1 else -T.log(1.0 - p)


def total_loss(corr, clss_cc, clss_mlo):
    """Unweighted sum of the three terms.

    ``corr`` may be ``None`` (correlation term disabled), in which case it is
    reported as 0.0 and contributes nothing.
    """
    if corr is None:
        corr = T.Tensor(0.0)
    return LossBreakdown(corr, clss_cc, clss_mlo, corr + clss_cc + clss_mlo)
