"""Ultrasound image captioning pipeline.

Subpackages cover the full path from raw scan to scored caption:
intensity-profile ROI cropping (:mod:`uucap.images`), caption text
normalization and vocabulary handling (:mod:`uucap.text`), feature
extraction and the binary feature-vector format (:mod:`uucap.features`),
the recurrent captioning model and its trainer (:mod:`uucap.captioner`,
:mod:`uucap.training`), BLEU/ROUGE scoring (:mod:`uucap.metrics`), and a
command-line front end (:mod:`uucap.cli`).
"""

__version__ = "0.1.0"
