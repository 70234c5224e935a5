"""BLEU-1..4 and ROUGE-1/2/L scoring over caption pairs.

BLEU follows the clipped modified-precision definition with a brevity
penalty and uniform log weights; corpus scores aggregate counts and
lengths before taking ratios. ROUGE-N uses min-count n-gram overlap and
ROUGE-L the longest common subsequence; both report (recall, precision,
F1), with F1 as the headline number.

Candidates and references are normalized with the same rules as the
training captions, so scoring compares like with like.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .text import normalize_caption

Tokens = Sequence[str]


@dataclass(frozen=True)
class NgramCounts:
    """Occurrence counts of the order-n grams of one token sequence."""

    n: int
    counts: Counter

    @classmethod
    def from_tokens(cls, tokens: Tokens, n: int) -> "NgramCounts":
        if n < 1:
            raise ValueError("n-gram order must be >= 1")
        grams = Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
        return cls(n, grams)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def modified_precision(candidate: Tokens, references: list[Tokens], n: int) -> tuple[int, int]:
    """Clipped n-gram matches and candidate n-gram total.

    Each candidate n-gram's count is clipped at its maximum count over all
    references. Candidates shorter than n yield (0, 0).
    """
    cand = NgramCounts.from_tokens(candidate, n)
    max_ref: Counter = Counter()
    for ref in references:
        for gram, count in NgramCounts.from_tokens(ref, n).counts.items():
            if count > max_ref[gram]:
                max_ref[gram] = count
    clipped = sum(min(count, max_ref[gram]) for gram, count in cand.counts.items())
    return clipped, cand.total


def effective_reference_length(candidate_len: int, ref_lens: Sequence[int]) -> int:
    """Reference length closest to the candidate's; ties pick the shorter."""
    if not ref_lens:
        raise ValueError("at least one reference length is required")
    return min(ref_lens, key=lambda r: (abs(r - candidate_len), r))


def brevity_penalty(candidate_len: int, effective_ref_len: int) -> float:
    if candidate_len == 0:
        return 0.0
    if candidate_len > effective_ref_len:
        return 1.0
    return math.exp(1.0 - effective_ref_len / candidate_len)


def _bleu_from_stats(
    stats: list[tuple[int, int]],
    candidate_len: int,
    ref_len: int,
    max_n: int,
    smoothing_epsilon: float,
) -> float:
    """Combine per-order (clipped, total) counts into a BLEU score.

    Orders with no candidate n-grams at all (total 0) are undefined and
    drop out of the geometric mean — this is what makes a short caption
    identical to its reference score 1.0 at every max_n. A present order
    with zero matches zeroes the score unless epsilon smoothing is on.
    """
    log_sum = 0.0
    for clipped, total in stats:
        if total == 0:
            continue
        if clipped == 0:
            if smoothing_epsilon > 0.0:
                log_sum += math.log(smoothing_epsilon / total) / max_n
                continue
            return 0.0
        log_sum += math.log(clipped / total) / max_n
    return brevity_penalty(candidate_len, ref_len) * math.exp(log_sum)


def bleu(
    candidate: Tokens,
    references: list[Tokens],
    max_n: int = 4,
    smoothing_epsilon: float = 0.0,
) -> float:
    """Sentence-level BLEU with uniform weights over orders 1..max_n."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must lie in 1..4")
    if not references:
        raise ValueError("at least one reference is required")
    stats = [modified_precision(candidate, references, n) for n in range(1, max_n + 1)]
    ref_len = effective_reference_length(len(candidate), [len(r) for r in references])
    return _bleu_from_stats(stats, len(candidate), ref_len, max_n, smoothing_epsilon)


def corpus_bleu(
    candidates: list[Tokens],
    references_list: list[list[Tokens]],
    max_n: int = 4,
    smoothing_epsilon: float = 0.0,
) -> float:
    """Corpus BLEU: clipped/total counts and lengths summed over all pairs."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must lie in 1..4")
    if len(candidates) != len(references_list) or not candidates:
        raise ValueError("need equally many candidates and reference sets, at least one")
    clipped_sum = [0] * max_n
    total_sum = [0] * max_n
    cand_len_sum = 0
    ref_len_sum = 0
    for cand, refs in zip(candidates, references_list):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        for n in range(1, max_n + 1):
            clipped, total = modified_precision(cand, refs, n)
            clipped_sum[n - 1] += clipped
            total_sum[n - 1] += total
        cand_len_sum += len(cand)
        ref_len_sum += effective_reference_length(len(cand), [len(r) for r in refs])
    stats = list(zip(clipped_sum, total_sum))
    return _bleu_from_stats(stats, cand_len_sum, ref_len_sum, max_n, smoothing_epsilon)


def _f1(recall: float, precision: float) -> float:
    if recall + precision == 0.0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def rouge_n(candidate: Tokens, reference: Tokens, n: int) -> tuple[float, float, float]:
    """Min-count n-gram overlap as (recall, precision, F1)."""
    if n not in (1, 2):
        raise ValueError("rouge_n supports n in {1, 2}")
    cand = NgramCounts.from_tokens(candidate, n)
    ref = NgramCounts.from_tokens(reference, n)
    overlap = sum(min(count, ref.counts[gram]) for gram, count in cand.counts.items())
    recall = overlap / ref.total if ref.total else 0.0
    precision = overlap / cand.total if cand.total else 0.0
    return recall, precision, _f1(recall, precision)


def lcs_length(a: Tokens, b: Tokens) -> int:
    """Longest common subsequence length by the classic DP recurrence."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[len(b)]


def rouge_l(candidate: Tokens, reference: Tokens) -> tuple[float, float, float]:
    """LCS-based (recall, precision, F1); empty inputs score zero."""
    l = lcs_length(candidate, reference)
    recall = l / len(reference) if reference else 0.0
    precision = l / len(candidate) if candidate else 0.0
    return recall, precision, _f1(recall, precision)


@dataclass(frozen=True)
class MetricReport:
    """Corpus BLEU-1..4 plus macro-averaged ROUGE F1 scores."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    per_sample: list[dict]
    n_pairs: int

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "per_sample": self.per_sample,
        }


def evaluate_corpus(pairs: list[tuple[str, str]]) -> MetricReport:
    """Score (candidate, reference) text pairs after shared normalization.

    BLEU is corpus-aggregated; ROUGE scores are means of per-pair F1.
    """
    if not pairs:
        raise ValueError("cannot evaluate an empty pair list")
    candidates = []
    references = []
    per_sample = []
    rouge_sums = [0.0, 0.0, 0.0]
    for raw_cand, raw_ref in pairs:
        cand = normalize_caption(raw_cand).split()
        ref = normalize_caption(raw_ref).split()
        candidates.append(cand)
        references.append([ref])
        r1 = rouge_n(cand, ref, 1)[2]
        r2 = rouge_n(cand, ref, 2)[2]
        rl = rouge_l(cand, ref)[2]
        rouge_sums[0] += r1
        rouge_sums[1] += r2
        rouge_sums[2] += rl
        per_sample.append(
            {
                "candidate": " ".join(cand),
                "reference": " ".join(ref),
                "bleu1": bleu(cand, [ref], 1),
                "bleu2": bleu(cand, [ref], 2),
                "bleu3": bleu(cand, [ref], 3),
                "bleu4": bleu(cand, [ref], 4),
                "rouge1": r1,
                "rouge2": r2,
                "rougeL": rl,
            }
        )
    n = len(pairs)
    return MetricReport(
        bleu1=corpus_bleu(candidates, references, 1),
        bleu2=corpus_bleu(candidates, references, 2),
        bleu3=corpus_bleu(candidates, references, 3),
        bleu4=corpus_bleu(candidates, references, 4),
        rouge1=rouge_sums[0] / n,
        rouge2=rouge_sums[1] / n,
        rougeL=rouge_sums[2] / n,
        per_sample=per_sample,
        n_pairs=n,
    )
