"""Top Hessian eigenvalues and a filter-normalized loss landscape slice.

The eigensolver is deflated power iteration over Hessian-vector products;
for networks the quantization decisions are frozen at the evaluation
point, so the probed surface is the smooth surrogate that training
gradients actually follow.
"""

import numpy as np

from bitconv.analysis import hessian_topk, hessian_topk_operator, landscape_grid
from bitconv.model import build
from bitconv.train import TrainConfig, ablation_config, gen_synthetic, train

# validate the solver on a constructed quadratic first
rng = np.random.default_rng(4)
eigs = np.sort(10.0 * 0.7 ** np.arange(20) + 0.1)[::-1]
q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
a = q @ np.diag(eigs) @ q.T
est = hessian_topk_operator(lambda v: a @ v, 20, 5, seed=0)
print("constructed spectrum :", np.round(eigs[:5], 4))
print("power-iteration view :", np.round([e.value for e in est], 4))

# a short-trained quantized net
data = gen_synthetic("blobs", 240, 4, seed=1000, noise=1.4)
batch = (data[0].x[:96], data[0].y[:96])
net = build(ablation_config("prebn_dual", classes=4), seed=0, dtype=np.float64)
train(net, data, TrainConfig(epochs=5, lr=5e-3, seed=0))
for e in hessian_topk(net, batch, 3, seed=0):
    flag = "" if e.converged else "  (not converged)"
    print(f"net eigenvalue {e.value:9.3f}   residual {e.residual:.2e}{flag}")

xs, ys, losses = landscape_grid(net, batch, direction_seed=1, grid=(9, 0.8),
                                mode="2d-line")
print("\nloss along a filter-normalized direction:")
for x, l in zip(xs, losses[0]):
    bar = "#" * int(40 * (l - losses.min()) / max(losses.max() - losses.min(), 1e-9))
    print(f"  {x:+.2f}  {l:8.4f}  {bar}")
