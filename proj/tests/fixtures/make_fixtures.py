#!/usr/bin/env python3
"""Writes the 8-image 28x28 IDX fixture used by the tests (labels 0..7)."""

import pathlib
import struct

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent
SIZE = 28


def disc(cx, cy, r):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] + 0.5
    d = np.hypot(xx - cx, yy - cy)
    return np.clip(r + 0.5 - d, 0.0, 1.0)


def ring(cx, cy, r, w):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] + 0.5
    d = np.abs(np.hypot(xx - cx, yy - cy) - r)
    return np.clip(w / 2 + 0.5 - d, 0.0, 1.0)


def bar(x0, y0, x1, y1, w):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] + 0.5
    px, py = x1 - x0, y1 - y0
    t = np.clip(((xx - x0) * px + (yy - y0) * py) / (px * px + py * py), 0.0, 1.0)
    d = np.hypot(xx - (x0 + t * px), yy - (y0 + t * py))
    return np.clip(w / 2 + 0.5 - d, 0.0, 1.0)


def images():
    return [
        ring(14, 14, 8, 3),
        bar(14, 4, 14, 24, 3),
        np.maximum(bar(6, 6, 22, 6, 3), bar(22, 22, 6, 22, 3)),
        np.maximum(bar(6, 6, 22, 22, 3), bar(22, 6, 6, 22, 3)),
        disc(14, 14, 7),
        np.maximum(bar(4, 14, 24, 14, 3), bar(14, 4, 14, 24, 3)),
        np.maximum(ring(14, 18, 5, 3), bar(9, 18, 14, 4, 3)),
        bar(5, 5, 23, 23, 4),
    ]


def main():
    imgs = np.stack([np.rint(255 * np.clip(im, 0, 1)) for im in images()]).astype(np.uint8)
    labels = np.arange(len(imgs), dtype=np.uint8)
    with open(HERE / "fixture-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(imgs), SIZE, SIZE))
        f.write(imgs.tobytes())
    with open(HERE / "fixture-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main()
