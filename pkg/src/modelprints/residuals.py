"""High-pass residuals and the averaged-residual baseline fingerprint.

The residual of an image is image minus its 3x3 median (replicate-padded at
the borders), shifted to zero mean. Smooth content dies under the median
filter; planted high-frequency artifacts survive almost untouched, which is
the whole trick. Averaging residuals over many images of one process is the
classic sensor-noise-style fingerprint we use as a reference point.
"""

from __future__ import annotations

import numpy as np


def median3(images):
    """3x3 median filter with replicate padding, batched over leading axes.

    Accepts (..., H, W); filters each trailing 2D raster independently.
    """
    images = np.asarray(images)
    if images.ndim < 2:
        raise ValueError(f"median3 expects (..., H, W), got shape {images.shape}")
    padded = np.pad(images, [(0, 0)] * (images.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
    h, w = images.shape[-2:]
    windows = np.stack([padded[..., i:i + h, j:j + w]
                        for i in range(3) for j in range(3)], axis=-1)
    return np.median(windows, axis=-1)


def residual(images):
    """Zero-mean high-pass residual: image - median3(image), per raster."""
    images = np.asarray(images, dtype=np.float64)
    r = images - median3(images)
    return r - r.mean(axis=(-2, -1), keepdims=True)


def prnu_fingerprint(images):
    """Average residual over a stack (count, H, W) or (count, C, H, W).

    Per-image artifacts and noise average out; the process-specific stamp
    accumulates. Returns float64 with the stack axis removed.
    """
    images = np.asarray(images)
    if images.ndim < 3:
        raise ValueError(f"expected a stack of images, got shape {images.shape}")
    if images.shape[0] < 1:
        raise ValueError("empty image stack")
    return residual(images).mean(axis=0)


def cosine(a, b):
    """Cosine similarity of two rasters (flattened)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))
