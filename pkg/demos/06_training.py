"""Train the four desk-scale ablation configs on one synthetic task.

baseline    = single binary depth-wise convs, no residuals
prebn       = adds the residual into the BN input (plus the outer skip)
dual        = two parallel sign branches per depth-wise conv
prebn_dual  = both

The run shows the stability gap: the baseline's validation accuracy keeps
fluctuating late into training while the combined variant settles.
"""

import numpy as np

from bitconv.model import build
from bitconv.train import TrainConfig, ablation_config, gen_synthetic, train

data = gen_synthetic("blobs", 480, 4, seed=1004, noise=1.4)
print(f"train {len(data[0])} / val {len(data[1])} samples, 4 classes\n")

for name in ("baseline", "prebn", "dual", "prebn_dual"):
    net = build(ablation_config(name, classes=4), seed=4, dtype=np.float64)
    report = train(net, data, TrainConfig(epochs=30, lr=5e-3, seed=4))
    val = report.curve("val")
    print(f"{name:11s} final val acc {val[-1]:.3f}   "
          f"late-epoch variance {report.late_variance('val'):.5f}   "
          f"last 6 epochs: {np.round(val[-6:], 3)}")
