"""Command-line pipeline driver.

Subcommands cover the whole chain: ``synth`` (toy corpus), ``crop``
(ROI cropping), ``vocab``, ``features`` (toy extractor), ``train``,
``caption`` and ``evaluate``.  Hyperparameters load from one JSON config
file with documented defaults; file locations are flags.  Every source
of randomness funnels through the single config seed (plus the explicit
``synth --seed``), so reruns are byte-identical.

Exit codes: 0 success, 1 pipeline error (one ``error: ...`` line on
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

from PIL import Image

from .captioner import GRU, LSTM, greedy_caption
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .features import extract_toy_store, read_feature_file, write_feature_file
from .images import (
    DEFAULT_THRESHOLD,
    apply_crop,
    column_means,
    compute_crop_bounds,
    load_image,
    to_grayscale,
)
from .metrics import evaluate_corpus
from .synth import generate_synthetic_corpus
from .text import (
    build_vocabulary,
    load_vocabulary,
    normalize_caption,
    read_manifest,
    save_vocabulary,
    tag_caption,
)
from .training import TrainingConfig, train

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

CONFIG_DEFAULTS = {
    "seed": 0,
    "split_fraction": 0.85,
    "batch_size": 16,
    "patience": 10,
    "max_epochs": 100,
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "rnn_kind": GRU,
    "bidirectional": True,
    "dropout_rate": 0.5,
    "proj_dim": 256,
    "embed_dim": 256,
    "hidden": 128,
    "head_dim": 128,
    "max_len": 54,
}
_TRAINING_KEYS = (
    "seed", "split_fraction", "batch_size", "patience", "max_epochs",
    "lr", "beta1", "beta2", "epsilon",
)


def load_run_config(path: str | Path | None) -> tuple[TrainingConfig, dict]:
    """Merge a JSON config over the defaults; reject unknown keys."""
    merged = dict(CONFIG_DEFAULTS)
    if path is not None:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError(f"config {path} must hold a JSON object")
        unknown = sorted(set(doc) - set(CONFIG_DEFAULTS))
        if unknown:
            raise ValueError(f"config {path} has unknown keys: {', '.join(unknown)}")
        merged.update(doc)
    training = TrainingConfig(**{k: merged[k] for k in _TRAINING_KEYS})
    kind = str(merged["rnn_kind"]).upper()
    if kind not in (GRU, LSTM):
        raise ValueError(f"rnn_kind must be {GRU} or {LSTM}, got {merged['rnn_kind']!r}")
    arch_options = {
        "rnn_kind": kind,
        "bidirectional": bool(merged["bidirectional"]),
        "dropout_rate": merged["dropout_rate"],
        "proj_dim": merged["proj_dim"],
        "embed_dim": merged["embed_dim"],
        "rnn_hidden_per_direction": merged["hidden"],
        "head_dim": merged["head_dim"],
        "max_len": merged["max_len"],
    }
    return training, arch_options


def _write_json(doc: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------- commands


def cmd_synth(args: argparse.Namespace) -> int:
    rows = generate_synthetic_corpus(args.n, args.seed, args.out)
    print(f"wrote {len(rows)} images and manifest.csv to {args.out}")
    return 0


def cmd_crop(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out)
    images = sorted(
        p for p in in_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise ValueError(f"no images found in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in images:
        gray = to_grayscale(load_image(path))
        box = compute_crop_bounds(gray, args.threshold, args.crop_axis)
        cropped = apply_crop(gray, box)
        Image.fromarray(cropped.data, mode="L").save(out_dir / path.name, format="PNG")
        if args.emit_profiles:
            profile_path = out_dir / f"{path.stem}_profile.csv"
            with profile_path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["column", "mean_intensity"])
                for i, value in enumerate(column_means(gray)):
                    writer.writerow([i, repr(float(value))])
    manifest = in_dir / "manifest.csv"
    if manifest.is_file():
        shutil.copyfile(manifest, out_dir / "manifest.csv")
    print(f"cropped {len(images)} images into {out_dir}")
    return 0


def cmd_vocab(args: argparse.Namespace) -> int:
    rows = read_manifest(args.manifest)
    vocab = build_vocabulary([tag_caption(normalize_caption(c)) for _, c in rows])
    save_vocabulary(vocab, args.out)
    print(f"vocabulary of {vocab.size} words (max caption length {vocab.max_caption_length}) -> {args.out}")
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    rows = read_manifest(args.manifest)
    store = extract_toy_store(
        rows, args.images, args.toy_dim, args.stream, args.threshold, args.crop_axis
    )
    write_feature_file(store, args.out)
    print(f"wrote {len(store.records)} feature vectors of dim {store.dim} -> {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    training_cfg, arch_options = load_run_config(args.config)
    rows = read_manifest(args.manifest)
    store_a = read_feature_file(args.feat_a, "A")
    store_b = read_feature_file(args.feat_b, "B")
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    result = train(rows, store_a, store_b, training_cfg, arch_options, vocab)
    save_checkpoint(
        Checkpoint(
            params=result.params,
            arch=result.arch,
            vocab=result.vocab,
            seed=training_cfg.seed,
            best_epoch=result.history.best_epoch,
        ),
        args.out,
    )
    if args.history:
        _write_json(result.history.to_dict(), args.history)
    h = result.history
    print(
        f"checkpoint -> {args.out} (stopped epoch {h.stopped_epoch}, "
        f"best epoch {h.best_epoch}, {h.stop_reason})"
    )
    return 0


def cmd_caption(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.model)
    store_a = read_feature_file(args.feat_a, "A")
    store_b = read_feature_file(args.feat_b, "B")
    for store in (store_a, store_b):
        if args.image not in store.records:
            raise ValueError(f"image {args.image!r} not found in {store.stream_label}-stream features")
    text = greedy_caption(
        ckpt.params, ckpt.arch, ckpt.vocab,
        store_a.records[args.image].values, store_b.records[args.image].values,
    )
    print(text)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.model)
    rows = read_manifest(args.manifest)
    store_a = read_feature_file(args.feat_a, "A")
    store_b = read_feature_file(args.feat_b, "B")
    pairs = []
    for name, caption in rows:
        for store in (store_a, store_b):
            if name not in store.records:
                raise ValueError(f"image {name!r} not found in {store.stream_label}-stream features")
        generated = greedy_caption(
            ckpt.params, ckpt.arch, ckpt.vocab,
            store_a.records[name].values, store_b.records[name].values,
        )
        pairs.append((generated, caption))
    report = evaluate_corpus(pairs)
    _write_json(report.to_dict(), args.report)
    print(
        f"evaluated {report.n_pairs} pairs: BLEU-4 {report.bleu4:.4f}, "
        f"ROUGE-L {report.rougeL:.4f} -> {args.report}"
    )
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uucap",
        description="Ultrasound image captioning pipeline (ROI crop, toy features, recurrent captioner, BLEU/ROUGE evaluation).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--n", type=int, required=True, help="number of images (>= 2)")
    p.add_argument("--seed", type=int, default=1, help="placement jitter seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crop", help="ROI-crop every image in a directory")
    p.add_argument("--in", dest="in_dir", required=True, help="input image directory")
    p.add_argument("--out", required=True, help="output directory for cropped PNGs")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="fraction of the peak profile mean treated as dark (default 0.05)")
    p.add_argument("--crop-axis", choices=["both", "horizontal"], default="both",
                   help="crop columns and rows, or columns only")
    p.add_argument("--emit-profiles", action="store_true",
                   help="also write per-image column,mean_intensity CSVs")
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("vocab", help="build the caption vocabulary JSON")
    p.add_argument("--manifest", required=True, help="filename,caption CSV")
    p.add_argument("--out", required=True, help="vocabulary JSON path")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("features", help="extract toy grid-mean features to a UFV1 file")
    p.add_argument("--manifest", required=True, help="filename,caption CSV")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--toy-dim", type=int, required=True, help="feature dimension")
    p.add_argument("--stream", choices=["A", "B"], default="A", help="stream label")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--crop-axis", choices=["both", "horizontal"], default="both")
    p.add_argument("--out", required=True, help="output UFV1 path")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a captioner from manifest + feature files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--feat-a", required=True, help="stream-A UFV1 file")
    p.add_argument("--feat-b", required=True, help="stream-B UFV1 file")
    p.add_argument("--config", help="JSON config; defaults used when omitted")
    p.add_argument("--vocab", help="vocabulary JSON (default: built from the training split)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--history", help="optional training-history JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="greedy-decode a caption for one image")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--feat-a", required=True)
    p.add_argument("--feat-b", required=True)
    p.add_argument("--image", required=True, help="image filename key")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score generated captions against a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--feat-a", required=True)
    p.add_argument("--feat-b", required=True)
    p.add_argument("--report", required=True, help="output report JSON path")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # surface pipeline failures as one parsable line
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
