"""Bit-packed sign tensors and the XNOR-popcount dot product.

A +/-1 vector packs to one bit per element (1 encodes +1). The dot product
of two such vectors is then 2*popcount(XNOR) - n on the packed words,
64 lanes at a time.
"""

import numpy as np

from bitconv.tensor import pack, unpack, xnor_popcount_dot, _pack_rows

rng = np.random.default_rng(0)

x = rng.standard_normal((1, 2, 4, 5))
bits = pack(x, threshold=0.0)
print("dense shape:", x.shape)
print("packed words per channel:", bits.words_per_channel, "pad bits:", bits.pad_bits)
print("round-trip == sign(x):", np.array_equal(unpack(bits), np.where(x >= 0, 1.0, -1.0)))

n = 200
a = rng.choice([-1.0, 1.0], n)
b = rng.choice([-1.0, 1.0], n)
aw = _pack_rows((a > 0).reshape(1, -1))[0]
bw = _pack_rows((b > 0).reshape(1, -1))[0]
print(f"\n{n}-element dot via floats:        {int(a @ b)}")
print(f"{n}-element dot via xnor-popcount: {xnor_popcount_dot(aw, bw, n)}")
print(f"words touched: {aw.size} (vs {n} multiply-adds)")
