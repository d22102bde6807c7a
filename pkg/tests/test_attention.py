import math

import numpy as np
import pytest

from dchanet import tensor as T
from dchanet.attention import (
    HybridAttentionModule,
    hybrid_forward,
    init_hybrid,
    init_local_relation,
    init_non_local,
    local_relation_forward,
    local_relation_weights,
    nonlocal_attention_forward,
    non_local_weights,
)
from dchanet.errors import DimensionError, WindowError
from dchanet.gradcheck import check_gradients


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _proj(w, b, f):
    return np.einsum("oc,chw->ohw", w[:, :, 0, 0], f) + b[:, None, None]


def naive_local(f, p):
    """Pixel-by-pixel evaluation with explicit window loops."""
    c, h, w = f.shape
    q = _proj(p.query_w.data, p.query_b.data, f)
    kp = _proj(p.key_w.data, p.key_b.data, f)
    r = p.k // 2
    out = np.zeros_like(f)
    for i in range(h):
        for j in range(w):
            keys, vals = [], []
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    y, x = i + di, j + dj
                    inside = 0 <= y < h and 0 <= x < w
                    keys.append(kp[:, y, x] if inside else np.zeros(c))
                    vals.append(f[:, y, x] if inside else np.zeros(c))
            a = _softmax(np.array([q[:, i, j] @ kk for kk in keys]) / math.sqrt(c))
            out[:, i, j] = sum(ai * v for ai, v in zip(a, vals))
    return out + f


def naive_non_local(f, p):
    c, h, w = f.shape
    q = _proj(p.query_w.data, p.query_b.data, f)
    kp = _proj(p.key_w.data, p.key_b.data, f)
    out = np.zeros_like(f)
    for i in range(h):
        for j in range(w):
            a = _softmax(np.array([q[:, i, j] @ kp[:, i, jj] for jj in range(w)]) / math.sqrt(c))
            out[:, i, j] = f[:, i, :] @ a
    return out + f


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# local relation block -------------------------------------------------------

def test_local_matches_loop_oracle(rng):
    for k in (1, 3, 5):
        p = init_local_relation(4, rng, k=k)
        f = rng.normal(size=(4, 6, 7))
        np.testing.assert_allclose(local_relation_forward(f, p).data, naive_local(f, p), atol=1e-12)


def test_local_k1_doubles_input_exactly(rng):
    for _ in range(5):
        p = init_local_relation(3, rng, k=1)
        p.query_w.data = rng.normal(size=p.query_w.shape) * 5
        p.key_b.data = rng.normal(size=3)
        f = rng.normal(size=(3, 5, 4)) * 10
        np.testing.assert_array_equal(local_relation_forward(f, p).data, 2 * f)


def test_local_uniform_attention_closed_form():
    c = 0.7
    p = init_local_relation(2, None, k=3, zero=True)
    out = local_relation_forward(np.full((2, 5, 5), c), p).data
    np.testing.assert_allclose(out[:, 2, 2], 2 * c, atol=1e-15)
    np.testing.assert_allclose(out[:, 0, 0], 13 * c / 9, atol=1e-15)
    np.testing.assert_allclose(out[:, 0, 2], 15 * c / 9, atol=1e-15)


def test_local_attention_is_probability_vector(rng):
    p = init_local_relation(4, rng)
    a = local_relation_weights(rng.normal(size=(4, 6, 6)) * 3, p).data
    assert a.shape == (36, 1, 9)
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(a > 0)


@pytest.mark.parametrize("k", [3, 5])
def test_local_receptive_field(rng, k):
    p = init_local_relation(3, rng, k=k)
    f = rng.normal(size=(3, 9, 9))
    base = local_relation_forward(f, p).data
    r = k // 2
    i, j = 4, 4
    for y in range(9):
        for x in range(9):
            if max(abs(y - i), abs(x - j)) <= r:
                continue
            g = f.copy()
            g[:, y, x] += 10.0
            np.testing.assert_array_equal(local_relation_forward(g, p).data[:, i, j], base[:, i, j])


def test_local_rejects_bad_geometry(rng):
    with pytest.raises(WindowError):
        init_local_relation(3, rng, k=2)
    p = init_local_relation(3, rng)
    with pytest.raises(DimensionError):
        local_relation_forward(np.zeros((4, 5, 5)), p)


# non-local block ------------------------------------------------------------

def test_non_local_matches_loop_oracle(rng):
    p = init_non_local(4, rng)
    f = rng.normal(size=(4, 5, 6))
    np.testing.assert_allclose(nonlocal_attention_forward(f, p).data, naive_non_local(f, p), atol=1e-12)


def test_non_local_uniform_rows():
    p = init_non_local(3, None, zero=True)
    f = np.zeros((3, 4, 6))
    for i, c in enumerate([0.5, -1.0, 2.0, 3.25]):
        f[:, i, :] = c
    out = nonlocal_attention_forward(f, p).data
    np.testing.assert_allclose(out, 2 * f, atol=1e-14)


def test_non_local_zero_projection_gives_row_mean():
    p = init_non_local(2, None, zero=True)
    f = np.random.default_rng(0).normal(size=(2, 3, 5))
    out = nonlocal_attention_forward(f, p).data
    np.testing.assert_allclose(out - f, np.broadcast_to(f.mean(axis=2, keepdims=True), f.shape), atol=1e-14)


def test_non_local_weights_normalise_over_keys(rng):
    p = init_non_local(4, rng)
    a = non_local_weights(rng.normal(size=(4, 5, 6)), p).data
    assert a.shape == (5, 6, 6)
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-9)


def test_non_local_row_isolation(rng):
    p = init_non_local(3, rng)
    f = rng.normal(size=(3, 6, 7))
    base = nonlocal_attention_forward(f, p).data
    for j in range(6):
        g = f.copy()
        g[:, j, rng.integers(7)] += 5.0
        out = nonlocal_attention_forward(g, p).data
        others = [i for i in range(6) if i != j]
        np.testing.assert_array_equal(out[:, others], base[:, others])


def test_non_local_column_permutation_equivariance(rng):
    p = init_non_local(4, rng)
    f = rng.normal(size=(4, 5, 8))
    perm = rng.permutation(8)
    lhs = nonlocal_attention_forward(f[:, :, perm], p).data
    rhs = nonlocal_attention_forward(f, p).data[:, :, perm]
    assert np.max(np.abs(lhs - rhs)) < 1e-9


# hybrid ---------------------------------------------------------------------

def test_hybrid_constant_closed_form(rng):
    local = init_local_relation(3, rng, k=1)
    module = HybridAttentionModule(local, init_non_local(3, None, zero=True))
    out = hybrid_forward(np.full((3, 4, 5), 1.25), module).data
    np.testing.assert_allclose(out, 5.0, atol=1e-14)


def test_hybrid_row_receptive_field(rng):
    m = init_hybrid(3, rng, k=3)
    f = rng.normal(size=(3, 8, 6))
    base = hybrid_forward(f, m).data
    for j in range(8):
        g = f.copy()
        g[:, j, :] += rng.normal(size=(3, 6))
        out = hybrid_forward(g, m).data
        far = [i for i in range(8) if abs(i - j) > 1]
        np.testing.assert_array_equal(out[:, far], base[:, far])


def test_hybrid_channel_mismatch(rng):
    with pytest.raises(DimensionError):
        HybridAttentionModule(init_local_relation(3, rng), init_non_local(4, rng))


def test_hybrid_gradient_check():
    rng = np.random.default_rng(5)
    m = init_hybrid(4, rng)
    f = rng.normal(size=(4, 8, 8))
    proj = [m.local.query_w, m.local.query_b, m.local.key_w, m.local.key_b,
            m.non_local.query_w, m.non_local.query_b, m.non_local.key_w, m.non_local.key_b]
    arrays = [f] + [t.data + rng.normal(size=t.shape) * 0.1 for t in proj]

    def build(f, lqw, lqb, lkw, lkb, nqw, nqb, nkw, nkb):
        from dchanet.attention import LocalRelationParams, NonLocalAttentionParams
        mod = HybridAttentionModule(LocalRelationParams(lqw, lqb, lkw, lkb, 3),
                                    NonLocalAttentionParams(nqw, nqb, nkw, nkb))
        return T.mean(hybrid_forward(f, mod))

    assert check_gradients(build, arrays) < 1e-3
