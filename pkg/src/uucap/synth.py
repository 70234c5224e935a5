"""Synthetic caption corpus: bright geometric shapes on dark bordered frames.

Each image is a 256x192 grayscale frame with an all-black asymmetric
border (so the ROI cropper has real work to do), a dim interior, and one
bright shape placed in a named quadrant.  The caption states the shape
and quadrant using a fixed template whose words survive text
normalization unchanged, which lets exact-reproduction checks compare
generated captions against manifest captions directly.

Generation is deterministic: the same (n, seed) always produces
byte-identical image and manifest files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .text import write_manifest

WIDTH = 256
HEIGHT = 192
BORDER_LEFT = 24
BORDER_RIGHT = 20
BORDER_TOP = 18
BORDER_BOTTOM = 14
BACKGROUND = 40
FOREGROUND = 220
JITTER = 3

SHAPES = ("circle", "square", "cross", "ring")
POSITIONS = ("upper left", "upper right", "lower left", "lower right")
SCALES = (1.0, 0.7, 1.25)


def caption_for(shape: str, position: str) -> str:
    return f"bright {shape} in the {position} of the frame"


def _quadrant_center(position: str) -> tuple[int, int]:
    inner_w = WIDTH - BORDER_LEFT - BORDER_RIGHT
    inner_h = HEIGHT - BORDER_TOP - BORDER_BOTTOM
    cx = BORDER_LEFT + (inner_w // 4 if "left" in position else (3 * inner_w) // 4)
    cy = BORDER_TOP + (inner_h // 4 if "upper" in position else (3 * inner_h) // 4)
    return cx, cy


def draw_pattern(
    shape: str,
    position: str,
    jitter: tuple[int, int] = (0, 0),
    scale: float = 1.0,
) -> np.ndarray:
    """Render one frame as a (HEIGHT, WIDTH) uint8 array."""
    canvas = np.zeros((HEIGHT, WIDTH), dtype=np.uint8)
    canvas[BORDER_TOP : HEIGHT - BORDER_BOTTOM, BORDER_LEFT : WIDTH - BORDER_RIGHT] = BACKGROUND
    cx, cy = _quadrant_center(position)
    cx += jitter[0]
    cy += jitter[1]
    yy, xx = np.ogrid[:HEIGHT, :WIDTH]
    dist_sq = (yy - cy) ** 2 + (xx - cx) ** 2

    def r(base: float) -> int:
        return max(1, round(base * scale))

    if shape == "circle":
        mask = dist_sq <= r(24) ** 2
    elif shape == "ring":
        mask = (dist_sq <= r(22) ** 2) & (dist_sq >= r(12) ** 2)
    elif shape == "square":
        mask = (np.abs(yy - cy) <= r(13)) & (np.abs(xx - cx) <= r(13))
    elif shape == "cross":
        vertical = (np.abs(xx - cx) <= r(3)) & (np.abs(yy - cy) <= r(20))
        horizontal = (np.abs(yy - cy) <= r(3)) & (np.abs(xx - cx) <= r(20))
        mask = vertical | horizontal
    else:
        raise ValueError(f"unknown shape {shape!r}")
    canvas[mask] = FOREGROUND
    return canvas


def generate_synthetic_corpus(n: int, seed: int, out_dir: str | Path) -> list[tuple[str, str]]:
    """Write n PNG frames plus ``manifest.csv`` into out_dir; return the rows.

    Image i pairs shape i%4 with quadrant i%4 at size SCALES[(i//4)%3],
    so patterns are distinct (shape, quadrant, size) triples while each
    caption recurs at a second size once n > 4.  Held-out images in a
    train/validation split therefore stay describable from what training
    shows, which keeps validation loss meaningful on tiny corpora.
    Placement jitter of up to +/-3 px comes from the seed.
    """
    if n < 2:
        raise ValueError("synthetic corpus needs n >= 2 images")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 4])
    rows: list[tuple[str, str]] = []
    for i in range(n):
        shape = SHAPES[i % 4]
        position = POSITIONS[i % 4]
        scale = SCALES[(i // 4) % len(SCALES)]
        jitter = tuple(int(v) for v in rng.integers(-JITTER, JITTER + 1, size=2))
        canvas = draw_pattern(shape, position, jitter, scale)
        filename = f"img_{i:03d}.png"
        Image.fromarray(canvas, mode="L").save(out_dir / filename, format="PNG")
        rows.append((filename, caption_for(shape, position)))
    write_manifest(rows, out_dir / "manifest.csv")
    return rows
