"""Grayscale -> two-level (Otsu) -> three-level image rendering.

Builds a synthetic grayscale image, thresholds it with Otsu's method (two
levels) and with the two-threshold generalization (three levels {0, 128,
255}), and writes the triptych as PGM files under demos_out/.
"""

import os

import numpy as np

from bitconv.quantize import (binarize_image, image_histogram, otsu_threshold,
                              otsu_two_thresholds, ternarize_image, write_pgm)

yy, xx = np.mgrid[0:96, 0:96]
img = 120 + 80 * np.sin(xx / 9.0) * np.cos(yy / 13.0) + 40 * ((xx + yy) % 96 > 48)
img = np.clip(img, 0, 255).astype(np.uint8)

hist = image_histogram(img)
t = otsu_threshold(hist)
t1, t2 = otsu_two_thresholds(hist)
two = binarize_image(img, t)
three = ternarize_image(img, t1, t2)

print(f"otsu threshold: {t}; three-level thresholds: ({t1}, {t2})")
print(f"levels: gray {len(np.unique(img))}, otsu {len(np.unique(two))}, "
      f"three-level {len(np.unique(three))}")

out = os.path.join(os.path.dirname(__file__), "demos_out")
os.makedirs(out, exist_ok=True)
for name, im in (("gray", img), ("otsu", two), ("ternary", three)):
    path = os.path.join(out, f"{name}.pgm")
    write_pgm(path, im)
    print("wrote", path)
