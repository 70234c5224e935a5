"""ROI extraction from ultrasound frames via intensity-profile thresholding.

The scan content sits in a bright region surrounded by near-black borders.
Cropping finds that region by looking at per-column (then per-row) mean
intensities: anchor at each half's peak, walk outward toward the edge, and
cut where the mean first drops below a fixed fraction of the peak.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

RAW_U8 = "raw_u8"
UNIT_FLOAT = "unit_float"
DEFAULT_THRESHOLD = 0.05
TARGET_SIZE = 224


@dataclass(frozen=True)
class ImageTensor:
    """Row-major pixel grid tagged with its value range.

    ``raw_u8`` data is uint8 in [0, 255]; ``unit_float`` is float32 in
    [0, 1]. Shape is (height, width) for single-channel images and
    (height, width, 3) for color.
    """

    data: np.ndarray
    range_tag: str

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3):
            raise ValueError(f"image data must be 2-D or 3-D, got shape {arr.shape}")
        if arr.ndim == 3 and arr.shape[2] != 3:
            raise ValueError(f"unsupported channel count {arr.shape[2]} (expected 1 or 3)")
        if self.range_tag == RAW_U8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("raw_u8 image values must lie in [0, 255]")
            if not np.issubdtype(arr.dtype, np.integer):
                if arr.size and not np.all(arr == np.rint(arr)):
                    raise ValueError("raw_u8 image values must be integral")
            arr = arr.astype(np.uint8)
        elif self.range_tag == UNIT_FLOAT:
            arr = arr.astype(np.float32)
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError("unit_float image values must lie in [0, 1]")
        else:
            raise ValueError(f"unknown range_tag {self.range_tag!r}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


@dataclass(frozen=True)
class IntensityProfile:
    """Mean intensities for one half of the column (or row) range."""

    values: np.ndarray
    half: str
    peak_index: int
    peak_value: float

    @classmethod
    def from_values(cls, values: np.ndarray, half: str) -> "IntensityProfile":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("intensity profile needs at least one column")
        if half not in ("left", "right"):
            raise ValueError(f"half must be 'left' or 'right', got {half!r}")
        peak_index = int(np.argmax(values))
        return cls(values, half, peak_index, float(values[peak_index]))


@dataclass(frozen=True)
class CropBox:
    """Inclusive pixel bounds of the region of interest."""

    x_left: int
    x_right: int
    y_top: int
    y_bottom: int

    def __post_init__(self):
        if not (0 <= self.x_left <= self.x_right and 0 <= self.y_top <= self.y_bottom):
            raise ValueError(f"invalid crop box {self}")

    def validate_for(self, height: int, width: int) -> None:
        if self.x_right >= width or self.y_bottom >= height:
            raise ValueError(
                f"crop box {self} out of range for a {width}x{height} image"
            )


def to_grayscale(img: ImageTensor) -> ImageTensor:
    """Collapse color to luma (0.299 R + 0.587 G + 0.114 B, rounded)."""
    if img.range_tag != RAW_U8:
        raise ValueError("to_grayscale expects raw_u8 input")
    if img.channels == 1:
        return img
    rgb = img.data.astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return ImageTensor(np.rint(luma).astype(np.uint8), RAW_U8)


def column_means(gray: ImageTensor) -> np.ndarray:
    if gray.channels != 1:
        raise ValueError("profiles are defined on single-channel images")
    return gray.data.astype(np.float64).mean(axis=0)


def row_means(gray: ImageTensor) -> np.ndarray:
    if gray.channels != 1:
        raise ValueError("profiles are defined on single-channel images")
    return gray.data.astype(np.float64).mean(axis=1)


def half_profiles(values: np.ndarray) -> tuple[IntensityProfile, IntensityProfile]:
    """Split a full-width profile at floor(n/2) into left/right halves."""
    values = np.asarray(values, dtype=np.float64)
    mid = values.shape[0] // 2
    return (
        IntensityProfile.from_values(values[:mid], "left"),
        IntensityProfile.from_values(values[mid:], "right"),
    )


def profile_bounds(values: np.ndarray, threshold_fraction: float) -> tuple[int, int]:
    """Inclusive (lo, hi) bounds from peak-anchored outward threshold scans.

    Each half gets its own peak and cutoff (threshold_fraction x peak).
    Walking from the peak toward the edge, the first value strictly below
    the cutoff marks the boundary; the kept range starts one past it. A
    half with no crossing keeps everything out to its edge.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    mid = n // 2
    left, right = half_profiles(values)

    lo = 0
    cutoff = threshold_fraction * left.peak_value
    for j in range(left.peak_index, -1, -1):
        if left.values[j] < cutoff:
            lo = j + 1
            break

    hi = n - 1
    cutoff = threshold_fraction * right.peak_value
    for j in range(right.peak_index, right.values.shape[0]):
        if right.values[j] < cutoff:
            hi = mid + j - 1
            break

    return lo, hi


def compute_crop_bounds(
    gray: ImageTensor,
    threshold_fraction: float = DEFAULT_THRESHOLD,
    axis: str = "both",
) -> CropBox:
    """Locate the ROI from column-mean (and optionally row-mean) profiles.

    Column bounds come from the half-split profile scan; with axis='both'
    the identical rule runs row-wise over the already-column-cropped range.
    An all-dark frame yields the full frame with a warning so batch jobs
    survive bad inputs.
    """
    if gray.range_tag != RAW_U8 or gray.channels != 1:
        raise ValueError("compute_crop_bounds expects a single-channel raw_u8 image")
    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError("threshold_fraction must lie strictly between 0 and 1")
    if axis not in ("horizontal", "both"):
        raise ValueError(f"axis must be 'horizontal' or 'both', got {axis!r}")
    h, w = gray.height, gray.width
    if w < 4:
        raise ValueError(f"image too narrow to crop (width {w} < 4)")
    if axis == "both" and h < 4:
        raise ValueError(f"image too short to crop (height {h} < 4)")

    if gray.data.max(initial=0) == 0:
        warnings.warn("all-dark frame: returning the full frame uncropped", stacklevel=2)
        return CropBox(0, w - 1, 0, h - 1)

    x_left, x_right = profile_bounds(column_means(gray), threshold_fraction)
    y_top, y_bottom = 0, h - 1
    if axis == "both":
        cropped_cols = ImageTensor(gray.data[:, x_left : x_right + 1], RAW_U8)
        y_top, y_bottom = profile_bounds(row_means(cropped_cols), threshold_fraction)
    return CropBox(x_left, x_right, y_top, y_bottom)


def apply_crop(img: ImageTensor, box: CropBox) -> ImageTensor:
    box.validate_for(img.height, img.width)
    return ImageTensor(
        img.data[box.y_top : box.y_bottom + 1, box.x_left : box.x_right + 1],
        img.range_tag,
    )


def resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resample with half-pixel-center alignment.

    Source coordinates are clamped at the borders; resizing to the input
    size reproduces the input exactly.
    """
    src = np.asarray(values, dtype=np.float64)
    in_h, in_w = src.shape
    if in_h == 0 or in_w == 0 or out_h <= 0 or out_w <= 0:
        raise ValueError("resize requires positive dimensions")

    def _axis_coords(n_in: int, n_out: int):
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        return lo, hi, frac

    y0, y1, fy = _axis_coords(in_h, out_h)
    x0, x1, fx = _axis_coords(in_w, out_w)
    rows = src[y0] * (1.0 - fy)[:, None] + src[y1] * fy[:, None]
    return rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]


def standardize(img: ImageTensor, size: int = TARGET_SIZE) -> ImageTensor:
    """Resize to the model input size and rescale intensities to [0, 1]."""
    if img.range_tag != RAW_U8:
        raise ValueError("standardize expects raw_u8 input")
    if img.height == 0 or img.width == 0:
        raise ValueError("cannot standardize a zero-area image")
    if img.channels != 1:
        raise ValueError("standardize expects a single-channel image")
    resized = resize_bilinear(img.data, size, size)
    return ImageTensor((resized / 255.0).astype(np.float32), UNIT_FLOAT)


def load_image(path: str | Path) -> ImageTensor:
    """Decode a JPG/PNG file into a raw_u8 tensor (1 or 3 channels)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode == "P":
                im = im.convert("RGB")
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            elif im.mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise ValueError(
                    f"cannot read image {path}: unsupported mode {im.mode!r} "
                    "(expected 8-bit grayscale or RGB)"
                )
    except (UnidentifiedImageError, OSError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return ImageTensor(arr, RAW_U8)


def preprocess_image(
    path: str | Path,
    threshold_fraction: float = DEFAULT_THRESHOLD,
    axis: str = "both",
) -> ImageTensor:
    """File -> grayscale -> ROI crop -> 224x224 unit-range tensor."""
    img = load_image(path)
    gray = to_grayscale(img)
    box = compute_crop_bounds(gray, threshold_fraction, axis)
    return standardize(apply_crop(gray, box))
