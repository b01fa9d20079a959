"""Top-down overlay images of affordance maps.

Image layout: agent forward (+x) points up and agent left (+y) points left, so
image pixel (i, j) shows grid cell (rows - 1 - i, cols - 1 - j).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geodesy import FREE_CELL, STATIC, TravGrid

HEATMAP_THRESHOLD = 0.40
_GRAY = {FREE_CELL: 205, STATIC: 45}
_TRANSIENT_GRAY = 125
OUTLINE_RGB = (0, 200, 255)
MARKER_RGB = (40, 220, 40)


def warm_ramp(v):
    """Map values in [0, 1] to a dark red -> orange -> yellow ramp."""
    v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    r = 160 + 95 * np.minimum(v * 2, 1.0)
    g = 230 * np.clip(v * 1.5 - 0.3, 0.0, 1.0)
    b = 40 * np.clip(v - 0.8, 0.0, 1.0) * 5
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def _outline(mask):
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1)
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~inner


def overlay(trav: TravGrid, score=None, region=None, marker=None, threshold: float = HEATMAP_THRESHOLD,
            upscale: int = 4) -> np.ndarray:
    """RGB uint8 image of shape (rows * upscale, cols * upscale, 3).

    ``score`` cells at or above ``threshold`` get the warm ramp, ``region`` (bool
    mask) is outlined and ``marker`` (row, col) gets a cross.
    """
    if upscale < 1:
        raise ValueError("upscale must be >= 1")
    state = trav.state
    gray = np.full(state.shape, _TRANSIENT_GRAY, dtype=np.uint8)
    for k, v in _GRAY.items():
        gray[state == k] = v
    img = np.repeat(gray[..., None], 3, axis=2)
    if score is not None:
        s = np.asarray(score, dtype=float).reshape(state.shape)
        hot = s >= threshold
        if hot.any():
            lo = min(threshold, 1.0)
            img[hot] = warm_ramp((s[hot] - lo) / max(1.0 - lo, 1e-9))
    if region is not None:
        img[_outline(region)] = OUTLINE_RGB
    img = img[::-1, ::-1]
    img = np.repeat(np.repeat(img, upscale, axis=0), upscale, axis=1)
    if marker is not None:
        rows, cols = state.shape
        i, j = rows - 1 - int(marker[0]), cols - 1 - int(marker[1])
        ci, cj = i * upscale + upscale // 2, j * upscale + upscale // 2
        arm = max(2, 2 * upscale)
        h, w = img.shape[:2]
        img[max(ci - arm, 0):min(ci + arm + 1, h), cj] = MARKER_RGB
        img[ci, max(cj - arm, 0):min(cj + arm + 1, w)] = MARKER_RGB
    return np.ascontiguousarray(img)


def save_image(path, img: np.ndarray) -> None:
    """PPM for ``.ppm`` paths, otherwise whatever Pillow infers from the suffix."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        from .sensor import write_ppm

        write_ppm(path, img)
        return
    from PIL import Image

    Image.fromarray(img, mode="RGB").save(path)
