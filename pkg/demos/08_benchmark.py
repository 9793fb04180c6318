"""Single-threaded conv latency comparison.

Full geometry (56x56, 128 channels) takes a minute or two; pass --small
for an 8x smaller smoke run. Absolute numbers are host-specific; the
orderings are the point: binary regular beats float regular, and the dual
binary depth-wise conv plus a residual add stays far below a binary
regular conv.
"""

import sys

from bitconv.bench import bench_suite

small = "--small" in sys.argv
geometry = (28, 28, 32) if small else (56, 56, 128)
reps = 10 if small else 30

results = bench_suite(geometry=geometry, reps=reps, warmup=3)
by_name = {r.op: r for r in results}
print(f"geometry {geometry[0]}x{geometry[1]}:{geometry[2]}, {reps} reps\n")
for r in results:
    print(f"{r.op:16s} median {r.median_ms:9.3f} ms   iqr {r.iqr_ms:7.3f} ms")

fc, bc = by_name["float_conv"].median_ms, by_name["binary_conv"].median_ms
dual_total = by_name["dual_binary_dw"].median_ms + by_name["residual_add"].median_ms
print(f"\nbinary regular speedup over float regular: {fc / bc:.2f}x")
print(f"dual binary dw + add vs binary regular:    {dual_total:.2f} ms vs {bc:.2f} ms")
