"""Frame heatmap rendering to portable pixmap (PPM) images.

Amplitudes are mapped linearly from the [min, max] of the rendered session
onto a fixed 256-entry blue-to-red colormap, one binary P6 image per frame.
Output is byte-deterministic for identical input.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

# Piecewise-linear anchors: deep blue, cyan, yellow, red.
_ANCHORS = np.array(
    [
        (0, (10, 10, 90)),
        (85, (40, 160, 220)),
        (170, (235, 220, 70)),
        (255, (200, 30, 30)),
    ],
    dtype=object,
)

_OUTLINE_RGB = np.array([255, 255, 255], dtype=np.uint8)


def colormap_256() -> np.ndarray:
    """The fixed (256, 3) uint8 colormap."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    positions = [int(p) for p, _ in _ANCHORS]
    colors = np.array([c for _, c in _ANCHORS], dtype=np.float64)
    for i in range(len(positions) - 1):
        lo, hi = positions[i], positions[i + 1]
        t = np.linspace(0.0, 1.0, hi - lo + 1)[:, None]
        lut[lo : hi + 1] = np.round(colors[i] * (1 - t) + colors[i + 1] * t)
    return lut


def frame_to_ppm(
    pixels: np.ndarray,
    vmin: float,
    vmax: float,
    lut: np.ndarray | None = None,
    mask: np.ndarray | None = None,
) -> bytes:
    """Binary P6 image of one M x N amplitude grid.

    ``mask`` optionally marks foreground pixels, drawn in white over the
    colormap.
    """
    if lut is None:
        lut = colormap_256()
    pixels = np.asarray(pixels, dtype=np.float64)
    if vmax > vmin:
        scaled = (pixels - vmin) / (vmax - vmin)
    else:
        scaled = np.zeros_like(pixels)
    idx = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    rgb = lut[idx]
    if mask is not None:
        rgb = rgb.copy()
        rgb[np.asarray(mask, dtype=bool)] = _OUTLINE_RGB
    header = f"P6\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode()
    return header + rgb.tobytes()


def render_heatmaps(
    frames_by_antenna: dict[int, list],
    out_dir: str | os.PathLike,
    masks_by_antenna: dict[int, list[np.ndarray]] | None = None,
) -> list[Path]:
    """Write one PPM per frame; returns the written paths in order.

    The color scale is shared across the whole session (global min/max of
    all frames) so images are directly comparable.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_frames = [f for frames in frames_by_antenna.values() for f in frames]
    if not all_frames:
        return []
    vmin = min(float(f.pixels.min()) for f in all_frames)
    vmax = max(float(f.pixels.max()) for f in all_frames)
    lut = colormap_256()
    paths = []
    for antenna in sorted(frames_by_antenna):
        for k, frame in enumerate(frames_by_antenna[antenna]):
            mask = None
            if masks_by_antenna is not None and antenna in masks_by_antenna:
                masks = masks_by_antenna[antenna]
                if k < len(masks):
                    mask = masks[k]
            path = out / f"frame_a{antenna}_{k:05d}.ppm"
            path.write_bytes(frame_to_ppm(frame.pixels, vmin, vmax, lut, mask))
            paths.append(path)
    return paths
