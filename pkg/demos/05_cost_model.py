"""OP/BOP/FLOP accounting: binary ops count 1/64 of a floating op.

Prints the canonical four-row comparison (3x3 regular vs depth-wise conv,
full precision vs binary, at 56x56 with 128 channels), then the totals for
two desk-scale model variants.
"""

from bitconv.analysis import count_ops, reference_op_table
from bitconv.model import ModelConfig, build

print(f"{'operation':26s} {'MACs':>14s} {'OPs':>14s}")
for row in reference_op_table():
    print(f"{row['name']:26s} {row['macs']:14,d} {row['ops']:14,.1f}")

for variant in ("A", "B"):
    net = build(ModelConfig(variant=variant, n_convs=2), seed=0)
    report = count_ops(net)
    print(f"\nvariant {variant}: BOPs={report.bops:,} FLOPs={report.flops:,} "
          f"OPs={report.ops:,.0f}")
    for lc in report.layers[:4]:
        print(f"  {lc.name:12s} {lc.kind:8s} bops={lc.bops:>10,} flops={lc.flops:>8,}")
    print("  ...")
