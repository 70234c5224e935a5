#!/usr/bin/env python3
"""Export CNN-backbone feature files (UFV1) from an image directory.

Runs a torchvision backbone (DenseNet-201 or Inception-V3) in inference mode
over every image named in a ``filename,caption`` manifest and writes one
feature vector per row in the UFV1 byte format:

    b"UFV1" | u32-LE record count | u32-LE dim |
    per record: u16-LE name length | utf-8 name | dim float32-LE values

The file is written atomically (temp file + rename). The export aborts —
touching nothing — when any manifest image is missing or when the produced
dimension differs from ``--expected-dim``.

This script is intentionally standalone: it shares only the UFV1 format with
the captioning package and imports nothing from it.
"""

from __future__ import annotations

import argparse
import csv
import os
import struct
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

MAGIC = b"UFV1"

BACKBONES = ("densenet201", "inceptionv3")
POOLINGS = ("global_average", "flatten_grid")

# Trunk output node and native input size per backbone. The defaults give the
# backbone's standard final convolutional feature map; any other tap point
# (e.g. a nonstandard dimension target) must be named explicitly via --layer —
# the exporter never guesses one.
DEFAULT_LAYER = {"densenet201": "features", "inceptionv3": "Mixed_7c"}
DEFAULT_IMAGE_SIZE = {"densenet201": 224, "inceptionv3": 299}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ExportError(RuntimeError):
    """Any condition that must abort the export."""


@dataclass(frozen=True)
class ExportSpec:
    backbone: str
    pooling: str
    expected_dim: int
    image_size: int
    layer: str
    weights: str  # "pretrained" or "random"
    seed: int
    manifest: Path
    images_dir: Path
    out: Path
    batch_size: int = 8

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ExportError(f"unknown backbone {self.backbone!r}")
        if self.pooling not in POOLINGS:
            raise ExportError(f"unknown pooling {self.pooling!r}")
        if self.expected_dim <= 0:
            raise ExportError(f"expected_dim must be positive, got {self.expected_dim}")
        if self.image_size <= 0:
            raise ExportError(f"image_size must be positive, got {self.image_size}")
        if self.weights not in ("pretrained", "random"):
            raise ExportError(f"weights must be 'pretrained' or 'random', got {self.weights!r}")
        if self.batch_size <= 0:
            raise ExportError(f"batch_size must be positive, got {self.batch_size}")


def read_manifest_names(path: Path) -> list[str]:
    """Filenames from a ``filename,caption`` CSV, in row order."""
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ExportError(f"manifest {path} is empty") from None
        if header != ["filename", "caption"]:
            raise ExportError(f"manifest {path} must start with the header 'filename,caption'")
        names = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ExportError(f"manifest {path} line {lineno}: expected 2 columns, got {len(row)}")
            names.append(row[0])
    return names


def write_ufv1_atomic(out: Path, dim: int, records: list[tuple[str, "np.ndarray"]]) -> None:
    """Serialize records and atomically replace ``out``."""
    parts = [MAGIC, struct.pack("<II", len(records), dim)]
    for name, values in records:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ExportError(f"record name too long to serialize: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(values.astype("<f4").tobytes())
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=out.parent, prefix=out.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(parts))
        os.replace(tmp_name, out)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _build_extractor(spec: ExportSpec):
    """Backbone in eval mode wrapped to return the chosen layer's output."""
    import warnings

    import torch
    import torchvision.models as models
    from torchvision.models.feature_extraction import create_feature_extractor

    torch.manual_seed(spec.seed)  # fixes the random-init path; harmless otherwise
    if spec.backbone == "densenet201":
        weights = models.DenseNet201_Weights.IMAGENET1K_V1 if spec.weights == "pretrained" else None
        model = models.densenet201(weights=weights)
    else:
        weights = models.Inception_V3_Weights.IMAGENET1K_V1 if spec.weights == "pretrained" else None
        model = models.inception_v3(weights=weights, init_weights=spec.weights == "random")
    model.eval()
    try:
        with warnings.catch_warnings():
            # the eval-vs-train node-set notice does not apply: we only run eval
            warnings.simplefilter("ignore", UserWarning)
            return create_feature_extractor(model, return_nodes={spec.layer: "feat"})
    except ValueError as exc:
        raise ExportError(f"layer {spec.layer!r} not found in {spec.backbone}: {exc}") from exc


def _load_batch(spec: ExportSpec, names: list[str]) -> "torch.Tensor":
    import numpy as np
    import torch
    from PIL import Image

    size = (spec.image_size, spec.image_size)
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(IMAGENET_STD, dtype=np.float32).reshape(3, 1, 1)
    batch = np.empty((len(names), 3, spec.image_size, spec.image_size), dtype=np.float32)
    for i, name in enumerate(names):
        with Image.open(spec.images_dir / name) as img:
            rgb = img.convert("RGB").resize(size, Image.BILINEAR)
        chw = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0
        batch[i] = (chw - mean) / std
    return torch.from_numpy(batch)


def _pool(feat: "torch.Tensor", pooling: str) -> "torch.Tensor":
    if feat.ndim == 2:  # already (N, C): nothing spatial left to pool
        return feat
    if feat.ndim != 4:
        raise ExportError(f"layer output has unsupported shape {tuple(feat.shape)}")
    if pooling == "global_average":
        return feat.mean(dim=(2, 3))
    return feat.flatten(start_dim=1)


def export_features(spec: ExportSpec) -> int:
    """Run the export; returns the number of records written."""
    names = read_manifest_names(spec.manifest)
    missing = [name for name in names if not (spec.images_dir / name).is_file()]
    if missing:
        raise ExportError(
            f"{len(missing)} manifest image(s) missing from {spec.images_dir}: "
            + ", ".join(missing)
        )
    if not names:
        write_ufv1_atomic(spec.out, spec.expected_dim, [])
        return 0

    import torch

    extractor = _build_extractor(spec)
    records: list[tuple[str, "np.ndarray"]] = []
    with torch.no_grad():
        for start in range(0, len(names), spec.batch_size):
            chunk = names[start : start + spec.batch_size]
            feat = _pool(extractor(_load_batch(spec, chunk))["feat"], spec.pooling)
            measured = int(feat.shape[1])
            if measured != spec.expected_dim:
                raise ExportError(
                    f"feature dim mismatch: {spec.backbone}/{spec.layer}/{spec.pooling} "
                    f"produced {measured}, expected {spec.expected_dim} "
                    f"(pick the tap point explicitly with --layer/--pooling)"
                )
            for name, row in zip(chunk, feat.numpy()):
                records.append((name, row))
    write_ufv1_atomic(spec.out, spec.expected_dim, records)
    return len(records)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Export backbone features for a manifest of images to a UFV1 file.",
    )
    parser.add_argument("--backbone", choices=BACKBONES, required=True)
    parser.add_argument("--pooling", choices=POOLINGS, required=True)
    parser.add_argument("--expected-dim", type=int, required=True,
                        help="abort unless the produced vectors have exactly this dim")
    parser.add_argument("--image-size", type=int, default=None,
                        help="square resize edge (default: backbone's native size)")
    parser.add_argument("--layer", default=None,
                        help="feature-extraction node name (default: the backbone's final "
                             "conv trunk; nonstandard dims require naming one explicitly)")
    parser.add_argument("--weights", choices=["pretrained", "random"], default="pretrained",
                        help="'random' gives a seeded untrained backbone for offline use")
    parser.add_argument("--seed", type=int, default=0, help="seed for --weights random")
    parser.add_argument("--manifest", required=True, help="filename,caption CSV")
    parser.add_argument("--images", required=True, help="directory of (already cropped) images")
    parser.add_argument("--out", required=True, help="output UFV1 path")
    parser.add_argument("--batch-size", type=int, default=8)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(
            backbone=args.backbone,
            pooling=args.pooling,
            expected_dim=args.expected_dim,
            image_size=args.image_size if args.image_size is not None else DEFAULT_IMAGE_SIZE[args.backbone],
            layer=args.layer if args.layer is not None else DEFAULT_LAYER[args.backbone],
            weights=args.weights,
            seed=args.seed,
            manifest=Path(args.manifest),
            images_dir=Path(args.images),
            out=Path(args.out),
            batch_size=args.batch_size,
        )
        count = export_features(spec)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} feature vectors of dim {spec.expected_dim} -> {spec.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
