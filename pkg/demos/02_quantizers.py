"""Sign and three-level quantizers, and why the three-level one is "1.58 bit".

The three-level quantizer is exactly the sum of two sign quantizers with
their own boundaries and magnitudes. N parallel sign quantizers produce
N+1 output levels, for an effective precision of log2(N+1) bits.
"""

import numpy as np

from bitconv.quantize import DualQuantParams, binarize, effective_bits, ternarize

p = DualQuantParams(alpha1=[-0.5], alpha2=[0.5], beta1=[1.0], beta2=[1.0])
xs = np.array([-1.2, -0.5, 0.0, 0.49, 0.5, 2.0]).reshape(1, 1, 1, -1)
print("inputs:        ", xs.ravel())
print("three-level:   ", ternarize(xs, p).ravel())

b1 = binarize(xs, p.branch(0))
b2 = binarize(xs, p.branch(1))
print("sum of signs:  ", (b1 + b2).ravel(), "(identical by construction)")

print("\neffective bits:")
for n in range(1, 5):
    print(f"  {n} parallel sign quantizers -> {n + 1} levels -> {effective_bits(n):.4f} bits")

rng = np.random.default_rng(1)
x = rng.standard_normal((1, 3, 16, 16)) * 2
a1 = rng.uniform(-0.6, 0.0, 3)
q = DualQuantParams(a1, a1 + rng.uniform(0.2, 0.8, 3), rng.random(3), rng.random(3))
same = np.array_equal(ternarize(x, q),
                      binarize(x, q.branch(0)) + binarize(x, q.branch(1)))
print("\ndecomposition identity on random tensors:", same)
