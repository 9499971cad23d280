"""Writes the canonical Netpbm fixtures used by the round-trip tests.

Run from this directory: python3 generate.py
"""
import numpy as np

rng = np.random.default_rng(20240611)

depth = rng.integers(0, 65536, size=(30, 40), dtype=np.uint16)
depth[rng.random(depth.shape) < 0.1] = 0
with open("depth_40x30.pgm", "wb") as f:
    f.write(b"P5\n40 30\n65535\n")
    f.write(depth.astype(">u2").tobytes())

color = rng.integers(0, 256, size=(30, 40, 3), dtype=np.uint8)
with open("color_40x30.ppm", "wb") as f:
    f.write(b"P6\n40 30\n255\n")
    f.write(color.tobytes())
