"""Caption normalization, vocabulary construction, and padded index encoding.

Captions move through three surface forms: the raw expert annotation, a
normalized lowercase word stream, and a tagged form wrapped in sentence
markers. The vocabulary maps tagged tokens to positive integer indices;
index 0 is reserved for padding and never maps to a word.
"""

from __future__ import annotations

import csv
import json
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

START = "<START>"
END = "<END>"
UNK = "<UNK>"
PAD_INDEX = 0

# ASCII punctuation/math symbols plus every Unicode P* character is stripped.
_ASCII_STRIPPED = frozenset(string.punctuation)


def _is_stripped(ch: str) -> bool:
    return ch in _ASCII_STRIPPED or unicodedata.category(ch).startswith("P")


def normalize_caption(raw: str) -> str:
    """Lowercase, de-punctuate, drop single-letter tokens, collapse whitespace.

    Punctuation characters are replaced by spaces (so clitics like "l'image"
    split apart before the single-letter pass removes the orphaned letter).
    Single digits are kept; only one-letter tokens are removed. The result is
    idempotent under re-normalization and may be empty.
    """
    lowered = raw.lower()
    spaced = "".join(" " if _is_stripped(ch) else ch for ch in lowered)
    kept = [tok for tok in spaced.split() if not (len(tok) == 1 and tok.isalpha())]
    return " ".join(kept)


def tag_caption(normalized: str) -> str:
    """Wrap a normalized caption in the literal sentence-boundary tokens."""
    if normalized:
        return f"{START} {normalized} {END}"
    return f"{START} {END}"


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional word<->index map with reserved entries.

    Indices run 1..size; 0 is the padding slot and maps to no word.
    ``max_caption_length`` is the token count of the longest tagged caption
    seen at build time (markers included).
    """

    word_to_index: dict[str, int]
    index_to_word: dict[int, str]
    max_caption_length: int

    @property
    def size(self) -> int:
        return len(self.word_to_index)

    @property
    def start_index(self) -> int:
        return self.word_to_index[START]

    @property
    def end_index(self) -> int:
        return self.word_to_index[END]

    @property
    def unk_index(self) -> int:
        return self.word_to_index[UNK]

    def index(self, word: str) -> int:
        """Index of ``word``, falling back to the unknown-word entry."""
        return self.word_to_index.get(word, self.word_to_index[UNK])

    def word(self, index: int) -> str:
        try:
            return self.index_to_word[index]
        except KeyError:
            raise ValueError(f"index {index} is not in the vocabulary") from None


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length encoded caption: zero-padded indices plus the true length."""

    indices: np.ndarray
    true_length: int

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int32))
        if self.indices.ndim != 1:
            raise ValueError("token indices must be one-dimensional")
        if not 0 <= self.true_length <= len(self.indices):
            raise ValueError("true_length out of range")


def build_vocabulary(tagged_captions: list[str]) -> Vocabulary:
    """Assign indices 1..N by descending corpus frequency, ties lexicographic.

    ``<UNK>`` is appended with the last index when absent from the corpus so
    unseen words always have a target. Deterministic for any input order.
    """
    if not tagged_captions:
        raise ValueError("cannot build a vocabulary from an empty caption corpus")
    counts: Counter[str] = Counter()
    max_len = 0
    for cap in tagged_captions:
        tokens = cap.split()
        counts.update(tokens)
        max_len = max(max_len, len(tokens))
    if START not in counts or END not in counts:
        raise ValueError("captions must be tagged before vocabulary construction")
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    if UNK not in counts:
        ordered.append(UNK)
    word_to_index = {tok: i for i, tok in enumerate(ordered, start=1)}
    index_to_word = {i: tok for tok, i in word_to_index.items()}
    return Vocabulary(word_to_index, index_to_word, max_len)


def encode_caption(vocab: Vocabulary, tagged: str, max_len: int) -> TokenSequence:
    """Map a tagged caption to a zero-padded index vector of length ``max_len``.

    Unknown words map to ``<UNK>``. Over-length captions keep their prefix and
    the final kept slot is forced to ``<END>``.
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2 to hold the sentence markers")
    ids = [vocab.index(tok) for tok in tagged.split()]
    if len(ids) > max_len:
        ids = ids[:max_len]
        ids[-1] = vocab.end_index
    true_length = len(ids)
    ids = ids + [PAD_INDEX] * (max_len - len(ids))
    return TokenSequence(np.asarray(ids, dtype=np.int32), true_length)


def decode_tokens(vocab: Vocabulary, seq: TokenSequence) -> str:
    """Render a token sequence back to surface text, markers and padding removed."""
    words = []
    for idx in seq.indices[: seq.true_length]:
        idx = int(idx)
        if idx == PAD_INDEX:
            continue
        word = vocab.word(idx)
        if word in (START, END):
            continue
        words.append(word)
    return " ".join(words)


def vocabulary_to_dict(vocab: Vocabulary) -> dict:
    """JSON-ready form: max length plus words in index order from 1."""
    words = [vocab.index_to_word[i] for i in range(1, vocab.size + 1)]
    return {"max_caption_length": vocab.max_caption_length, "words": words}


def vocabulary_from_dict(doc: dict, source: str = "vocabulary") -> Vocabulary:
    words = doc["words"]
    word_to_index = {tok: i for i, tok in enumerate(words, start=1)}
    if len(word_to_index) != len(words):
        raise ValueError(f"{source} contains duplicate words")
    index_to_word = {i: tok for tok, i in word_to_index.items()}
    for required in (START, END, UNK):
        if required not in word_to_index:
            raise ValueError(f"{source} is missing the {required} entry")
    return Vocabulary(word_to_index, index_to_word, int(doc["max_caption_length"]))


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Write the vocabulary JSON: max length plus words in index order from 1."""
    doc = vocabulary_to_dict(vocab)
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return vocabulary_from_dict(doc, source=f"vocabulary file {path}")


def read_manifest(path: str | Path) -> list[tuple[str, str]]:
    """Read the ``filename,caption`` dataset manifest, preserving row order."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"manifest {path} is empty") from None
        if header != ["filename", "caption"]:
            raise ValueError(f"manifest {path} must start with the header 'filename,caption'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ValueError(f"manifest {path} line {lineno}: expected 2 columns, got {len(row)}")
            rows.append((row[0], row[1]))
    return rows


def write_manifest(rows: list[tuple[str, str]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "caption"])
        writer.writerows(rows)
