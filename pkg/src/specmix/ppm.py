"""Binary PPM (P6) image writing; dependency-free and byte-stable."""

from __future__ import annotations

import numpy as np


def write_ppm(path, pixels):
    """Write an (H, W, 3) uint8 array as a binary P6 file."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError("pixels must be an (H, W, 3) uint8 array")
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path):
    """Read a binary P6 file written by write_ppm."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PPM supported")
        data = fh.read(w * h * 3)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def to_brightness(samples, peak=None):
    """Map field samples to 8-bit brightness by |value| / peak * 255.

    `samples` has shape (channels, npix); `peak` defaults to the maximum
    absolute value over all channels (the per-image max)."""
    samples = np.asarray(samples, dtype=float)
    if peak is None:
        peak = float(np.max(np.abs(samples)))
    if peak <= 0:
        return np.zeros(samples.shape, dtype=np.uint8)
    scaled = np.clip(np.abs(samples) / peak, 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)
