"""Image feature vectors: a toy grid-pooling extractor and the UFV1 format.

Real deployments feed the captioner with features exported from pretrained
backbones; the primary pipeline stays self-contained through a deterministic
grid-mean extractor. Both paths meet at the UFV1 binary file format, which
is the only contract between an exporter and this package.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .images import UNIT_FLOAT, ImageTensor, preprocess_image

MAGIC = b"UFV1"
HEADER_LEN = 12  # magic + u32 record_count + u32 dim


class FeatureFormatError(ValueError):
    """Raised for malformed UFV1 files; messages carry the byte offset."""


@dataclass(frozen=True)
class FeatureVector:
    """One image's feature vector, keyed by its manifest filename."""

    name: str
    dim: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1 or values.shape[0] != self.dim:
            raise ValueError(
                f"feature vector {self.name!r}: expected {self.dim} values, got shape {values.shape}"
            )
        if self.dim <= 0:
            raise ValueError(f"feature vector {self.name!r}: dim must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"feature vector {self.name!r} contains NaN or Inf")
        object.__setattr__(self, "values", values)


@dataclass
class FeatureStore:
    """All vectors of one input stream (A or B), keyed by unique name."""

    stream_label: str
    dim: int
    records: dict[str, FeatureVector] = field(default_factory=dict)

    def __post_init__(self):
        if self.stream_label not in ("A", "B"):
            raise ValueError(f"stream_label must be 'A' or 'B', got {self.stream_label!r}")
        for name, vec in self.records.items():
            if vec.dim != self.dim:
                raise ValueError(
                    f"record {name!r} has dim {vec.dim}, store declares {self.dim}"
                )

    def add(self, vec: FeatureVector) -> None:
        if vec.dim != self.dim:
            raise ValueError(f"record {vec.name!r} has dim {vec.dim}, store declares {self.dim}")
        if vec.name in self.records:
            raise ValueError(f"duplicate feature record {vec.name!r}")
        self.records[vec.name] = vec

    def matrix(self, names: list[str]) -> np.ndarray:
        """Stack the named records into an (n, dim) float32 matrix."""
        missing = [n for n in names if n not in self.records]
        if missing:
            raise KeyError(f"feature store {self.stream_label} is missing {missing[:5]}")
        return np.stack([self.records[n].values for n in names])


def extract_toy_features(img: ImageTensor, dim: int) -> np.ndarray:
    """Per-cell mean intensities over a ceil(sqrt(dim))-square grid, row-major.

    The flattened grid is truncated to exactly ``dim`` entries. Deterministic
    stand-in for a CNN backbone; cells partition the image by floor(i*size/g)
    boundaries.
    """
    if dim <= 0:
        raise ValueError("feature dim must be positive")
    if img.range_tag != UNIT_FLOAT or img.channels != 1:
        raise ValueError("toy extractor expects a single-channel unit_float image")
    g = math.isqrt(dim)
    if g * g < dim:
        g += 1
    h, w = img.height, img.width
    if g > h or g > w:
        raise ValueError(f"dim {dim} needs a {g}x{g} grid, larger than the {h}x{w} image")
    data = img.data.astype(np.float64)
    row_edges = [(i * h) // g for i in range(g + 1)]
    col_edges = [(j * w) // g for j in range(g + 1)]
    cells = np.empty(g * g, dtype=np.float64)
    k = 0
    for i in range(g):
        for j in range(g):
            cells[k] = data[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]].mean()
            k += 1
    return cells[:dim].astype(np.float32)


def extract_toy_store(
    rows: list[tuple[str, str]],
    image_dir: str | Path,
    dim: int,
    stream_label: str = "A",
    threshold_fraction: float = 0.05,
    axis: str = "both",
) -> FeatureStore:
    """Run the full preprocess + toy extractor over a manifest's images."""
    store = FeatureStore(stream_label, dim)
    image_dir = Path(image_dir)
    for name, _ in rows:
        tensor = preprocess_image(image_dir / name, threshold_fraction, axis)
        store.add(FeatureVector(name, dim, extract_toy_features(tensor, dim)))
    return store


def write_feature_file(store: FeatureStore, path: str | Path) -> None:
    """Serialize a store to UFV1: header, then name/values records in order."""
    parts = [MAGIC, struct.pack("<II", len(store.records), store.dim)]
    for name, vec in store.records.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"record name too long to serialize: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(vec.values.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_feature_file(path: str | Path, stream_label: str = "A") -> FeatureStore:
    """Parse a UFV1 file, rejecting corruption with exact byte offsets."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic at offset 0 (expected {MAGIC!r})")
    if len(data) < HEADER_LEN:
        raise FeatureFormatError(
            f"{path}: truncated header at offset {len(data)} (need {HEADER_LEN} bytes)"
        )
    count, dim = struct.unpack_from("<II", data, 4)
    if dim == 0:
        raise FeatureFormatError(f"{path}: dim 0 declared at offset 8")
    store = FeatureStore(stream_label, dim)
    offset = HEADER_LEN
    values_len = dim * 4
    for i in range(count):
        if offset + 2 > len(data):
            raise FeatureFormatError(f"{path}: truncated name length for record {i} at offset {offset}")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + name_len > len(data):
            raise FeatureFormatError(f"{path}: truncated name for record {i} at offset {offset}")
        try:
            name = data[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFormatError(
                f"{path}: record {i} name at offset {offset} is not valid UTF-8"
            ) from exc
        offset += name_len
        if offset + values_len > len(data):
            raise FeatureFormatError(
                f"{path}: truncated values for record {i} ({name!r}) at offset {offset}: "
                f"need {values_len} bytes, have {len(data) - offset}"
            )
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += values_len
        try:
            store.add(FeatureVector(name, dim, values))
        except ValueError as exc:
            raise FeatureFormatError(f"{path}: record {i} at offset {offset - values_len}: {exc}") from exc
    if offset != len(data):
        raise FeatureFormatError(
            f"{path}: {len(data) - offset} trailing bytes after offset {offset}"
        )
    return store
