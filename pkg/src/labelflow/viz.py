"""Overlay rendering: colorized masks and three-panel composites.

The class-color palette is fixed: ids 0-9 use the table below, higher ids are
generated deterministically from the id, and void renders black (no tint in
the blend).  Blending is integer alpha 0.5: (rgb + color) // 2.
"""

from __future__ import annotations

import numpy as np

from .core import LabelMask

_BASE_PALETTE = [
    (70, 70, 70),     # 0: background-ish gray
    (220, 20, 60),    # 1
    (0, 128, 255),    # 2
    (50, 205, 50),    # 3
    (255, 215, 0),    # 4
    (148, 0, 211),    # 5
    (255, 140, 0),    # 6
    (0, 206, 209),    # 7
    (255, 105, 180),  # 8
    (154, 205, 50),   # 9
]


def class_color(class_id: int) -> tuple[int, int, int]:
    if class_id < len(_BASE_PALETTE):
        return _BASE_PALETTE[class_id]
    return ((37 * class_id + 101) % 256,
            (91 * class_id + 53) % 256,
            (151 * class_id + 197) % 256)


def _as_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        return np.stack([img] * 3, axis=-1)
    return img


def colorize_mask(mask: LabelMask) -> np.ndarray:
    out = np.zeros((mask.height, mask.width, 3), dtype=np.uint8)
    for lid in mask.label_ids():
        out[mask.data == lid] = class_color(lid)
    return out


def blend_overlay(rgb: np.ndarray, mask: LabelMask) -> np.ndarray:
    """Alpha-0.5 tint on labeled pixels; void pixels pass the image through."""
    rgb = _as_rgb(rgb)
    color = colorize_mask(mask)
    labeled = (mask.data != mask.void_id)[..., None]
    blended = ((rgb.astype(np.uint16) + color.astype(np.uint16)) // 2).astype(np.uint8)
    return np.where(labeled, blended, rgb)


def overlay_panels(rgb: np.ndarray, mask: LabelMask) -> np.ndarray:
    """Three-panel composite: RGB | colorized mask | alpha-blended overlay."""
    rgb = _as_rgb(rgb)
    if rgb.shape[:2] != (mask.height, mask.width):
        raise ValueError(f"image size {rgb.shape[:2]} != mask size {(mask.height, mask.width)}")
    return np.concatenate([rgb, colorize_mask(mask), blend_overlay(rgb, mask)], axis=1)
