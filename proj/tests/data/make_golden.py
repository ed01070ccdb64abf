#!/usr/bin/env python3
"""Regenerates the conversion fixtures and their golden PGMs.

The reference conversion is written from scratch here with exact rational
arithmetic: bytes laid out row-major at a power-of-two width, the last row
zero-padded, then box-filtered down to 28x28.
"""
import math
from fractions import Fraction
from pathlib import Path

SIDE = 28
HERE = Path(__file__).resolve().parent


def fixture_bytes(n, seed):
    # 32-bit LCG with a few long zero runs, loosely like a PE image.
    out = bytearray()
    state = seed
    for i in range(n):
        state = (1664525 * state + 1013904223) & 0xFFFFFFFF
        b = state >> 24
        if (i // 257) % 5 == 3:
            b = 0
        out.append(b)
    return bytes(out)


def width_for(n):
    w = 2 ** round(math.log2(math.sqrt(n)))
    return min(max(w, 32), 1024)


def overlap(a0, a1, b0, b1):
    return max(Fraction(0), min(a1, b1) - max(a0, b0))


def box_resize(grid, h, w):
    out = []
    sy, sx = Fraction(h, SIDE), Fraction(w, SIDE)
    for oy in range(SIDE):
        y0, y1 = oy * sy, (oy + 1) * sy
        for ox in range(SIDE):
            x0, x1 = ox * sx, (ox + 1) * sx
            acc = Fraction(0)
            for y in range(math.floor(y0), math.ceil(y1)):
                wy = overlap(y0, y1, y, y + 1)
                for x in range(math.floor(x0), math.ceil(x1)):
                    acc += grid[y * w + x] * wy * overlap(x0, x1, x, x + 1)
            out.append(acc / (sy * sx))
    return out


def convert(data):
    w = width_for(len(data))
    h = -(-len(data) // w)
    grid = list(data) + [0] * (w * h - len(data))
    # Pixels are avg/255 in [0,1]; the PGM stores round(pixel * 255).
    return bytes(math.floor(v + Fraction(1, 2)) for v in box_resize(grid, h, w)), w, h


def main():
    for n, seed in ((1000, 11), (5000, 7)):
        data = fixture_bytes(n, seed)
        pixels, w, h = convert(data)
        (HERE / f"fixture_{n}.bin").write_bytes(data)
        (HERE / f"fixture_{n}.pgm").write_bytes(b"P5\n28 28\n255\n" + pixels)
        print(f"fixture_{n}: width {w} height {h}")


if __name__ == "__main__":
    main()
