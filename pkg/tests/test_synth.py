"""Synthetic corpus generator: determinism, distinctness, ROI compatibility."""

from pathlib import Path

import numpy as np
import pytest

from uucap.images import CropBox, compute_crop_bounds, load_image
from uucap.synth import (
    BACKGROUND,
    BORDER_BOTTOM,
    BORDER_LEFT,
    BORDER_RIGHT,
    BORDER_TOP,
    FOREGROUND,
    HEIGHT,
    WIDTH,
    caption_for,
    draw_pattern,
    generate_synthetic_corpus,
)
from uucap.text import normalize_caption, read_manifest


def corpus_bytes(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


class TestGenerate:
    def test_eight_images_and_manifest(self, tmp_path):
        rows = generate_synthetic_corpus(8, seed=1, out_dir=tmp_path)
        assert len(rows) == 8
        pngs = sorted(p.name for p in tmp_path.glob("*.png"))
        assert pngs == [f"img_{i:03d}.png" for i in range(8)]
        assert read_manifest(tmp_path / "manifest.csv") == rows

    def test_at_least_six_distinct_caption_words(self, tmp_path):
        rows = generate_synthetic_corpus(8, seed=1, out_dir=tmp_path)
        words = set()
        for _, caption in rows:
            words.update(caption.split())
        assert len(words) >= 6

    def test_deterministic_bytes(self, tmp_path):
        generate_synthetic_corpus(6, seed=42, out_dir=tmp_path / "one")
        generate_synthetic_corpus(6, seed=42, out_dir=tmp_path / "two")
        assert corpus_bytes(tmp_path / "one") == corpus_bytes(tmp_path / "two")

    def test_seed_changes_pixels(self, tmp_path):
        generate_synthetic_corpus(4, seed=1, out_dir=tmp_path / "one")
        generate_synthetic_corpus(4, seed=2, out_dir=tmp_path / "two")
        assert corpus_bytes(tmp_path / "one") != corpus_bytes(tmp_path / "two")

    def test_eight_distinct_patterns(self, tmp_path):
        rows = generate_synthetic_corpus(8, seed=3, out_dir=tmp_path)
        blobs = [(tmp_path / name).read_bytes() for name, _ in rows]
        assert len(set(blobs)) == 8  # size variants keep every image distinct
        assert len({caption for _, caption in rows}) == 4

    def test_captions_recur_across_size_variants(self, tmp_path):
        rows = generate_synthetic_corpus(8, seed=3, out_dir=tmp_path)
        for i in range(4):
            assert rows[i][1] == rows[i + 4][1]

    def test_rejects_n_below_two(self, tmp_path):
        with pytest.raises(ValueError, match="n >= 2"):
            generate_synthetic_corpus(1, seed=0, out_dir=tmp_path)

    def test_two_images_is_valid(self, tmp_path):
        rows = generate_synthetic_corpus(2, seed=0, out_dir=tmp_path)
        assert len(rows) == 2

    def test_captions_survive_normalization_unchanged(self, tmp_path):
        rows = generate_synthetic_corpus(16, seed=7, out_dir=tmp_path)
        for _, caption in rows:
            assert normalize_caption(caption) == caption


class TestFrameGeometry:
    def test_border_is_black_and_interior_lit(self):
        canvas = draw_pattern("circle", "upper left")
        assert canvas.shape == (HEIGHT, WIDTH)
        assert np.all(canvas[:, :BORDER_LEFT] == 0)
        assert np.all(canvas[:, WIDTH - BORDER_RIGHT :] == 0)
        assert np.all(canvas[:BORDER_TOP, :] == 0)
        assert np.all(canvas[HEIGHT - BORDER_BOTTOM :, :] == 0)
        interior = canvas[BORDER_TOP : HEIGHT - BORDER_BOTTOM, BORDER_LEFT : WIDTH - BORDER_RIGHT]
        assert interior.min() == BACKGROUND
        assert interior.max() == FOREGROUND

    def test_shape_lands_in_named_quadrant(self):
        canvas = draw_pattern("square", "lower right")
        bright_rows, bright_cols = np.nonzero(canvas == FOREGROUND)
        assert bright_rows.min() > HEIGHT // 2
        assert bright_cols.min() > WIDTH // 2

    def test_crop_recovers_exact_interior(self, tmp_path):
        generate_synthetic_corpus(8, seed=1, out_dir=tmp_path)
        for i in range(8):
            img = load_image(tmp_path / f"img_{i:03d}.png")
            box = compute_crop_bounds(img)
            assert box == CropBox(
                x_left=BORDER_LEFT,
                x_right=WIDTH - BORDER_RIGHT - 1,
                y_top=BORDER_TOP,
                y_bottom=HEIGHT - BORDER_BOTTOM - 1,
            )

    def test_unknown_shape_rejected(self):
        with pytest.raises(ValueError, match="unknown shape"):
            draw_pattern("triangle", "upper left")

    def test_caption_template(self):
        assert caption_for("ring", "lower left") == "bright ring in the lower left of the frame"
