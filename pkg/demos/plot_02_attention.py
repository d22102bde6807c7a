"""
Local and non-local attention on a feature map
==============================================

The local block attends inside a k x k window, the non-local block attends
along a whole row.  Both add their output back onto the input.
"""

import numpy as np

from dchanet.attention import (
    hybrid_forward,
    init_hybrid,
    init_local_relation,
    init_non_local,
    local_relation_forward,
    local_relation_weights,
    nonlocal_attention_forward,
)

rng = np.random.default_rng(1)
f = rng.normal(size=(8, 6, 6))

# with a 1 x 1 window the only key is the pixel itself: output is exactly 2F
print("k=1 doubles:", np.array_equal(local_relation_forward(f, init_local_relation(8, rng, k=1)).data, 2 * f))

# zero projections give uniform weights; corners see five padded zeros
flat = init_local_relation(1, None, k=3, zero=True)
print("corner of a constant map:", local_relation_forward(np.ones((1, 4, 4)), flat).data[0, 0, 0], "=", 13 / 9)

local = init_local_relation(8, rng)
w = local_relation_weights(f, local).data
print("window weights per pixel:", w.shape, "sum to one:", np.allclose(w.sum(-1), 1))

# changing one row leaves every other row of the non-local output alone
nl = init_non_local(8, rng)
g = f.copy()
g[:, 2] += 1.0
diff = np.abs(nonlocal_attention_forward(g, nl).data - nonlocal_attention_forward(f, nl).data).sum(axis=(0, 2))
print("rows changed by editing row 2:", np.flatnonzero(diff))

# the hybrid module chains both
print("hybrid output shape:", hybrid_forward(f, init_hybrid(8, rng)).shape)
