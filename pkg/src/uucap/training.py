"""Seeded training loop: Adam, minibatches, early stopping, best-weight restore.

Every random draw derives from the single run seed through tagged
generator streams (init [seed,0], split [seed,1], epoch shuffles
[seed,2,epoch], dropout [seed,3,epoch,batch]), so a run is reproducible
bit for bit from (data, config, seed) alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .captioner import (
    TRAIN,
    ArchitectureConfig,
    Batch,
    CaptionerParams,
    backward,
    batch_loss,
    expand_training_pairs,
    init_params,
)
from .features import FeatureStore
from .text import Vocabulary, build_vocabulary, encode_caption, normalize_caption, tag_caption


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 0
    split_fraction: float = 0.85
    batch_size: int = 16
    patience: int = 10
    max_epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    restore_best: bool = True

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.epsilon <= 0:
            raise ValueError("invalid Adam hyperparameters")


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 = never improved
    stopped_epoch: int = 0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "stop_reason": self.stop_reason,
        }


@dataclass
class AdamState:
    m: CaptionerParams
    v: CaptionerParams
    t: int = 0

    @classmethod
    def for_params(cls, params: CaptionerParams) -> "AdamState":
        return cls(
            m={k: np.zeros(p.shape) for k, p in params.items()},
            v={k: np.zeros(p.shape) for k, p in params.items()},
        )


def adam_step(
    params: CaptionerParams,
    grads: CaptionerParams,
    state: AdamState,
    cfg: TrainingConfig,
) -> tuple[CaptionerParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}; aborting training")
    t = state.t + 1
    new_params: CaptionerParams = {}
    new_m: CaptionerParams = {}
    new_v: CaptionerParams = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        stepped = p.astype(np.float64) - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        new_params[name] = stepped.astype(p.dtype)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


def split_rows(
    rows: list[tuple[str, str]], split_fraction: float, seed: int
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Seeded permutation split; both sides always get at least one row."""
    n = len(rows)
    if n < 2:
        raise ValueError("need at least 2 manifest rows to split")
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_train = int(round(n * split_fraction))
    n_train = min(max(n_train, 1), n - 1)
    train = [rows[i] for i in perm[:n_train]]
    val = [rows[i] for i in perm[n_train:]]
    return train, val


@dataclass
class SampleSet:
    """Expanded next-word samples for a list of manifest rows."""

    feat_a: np.ndarray
    feat_b: np.ndarray
    prefixes: np.ndarray
    lengths: np.ndarray
    targets: np.ndarray

    @property
    def size(self) -> int:
        return self.targets.shape[0]

    def subset(self, idx: np.ndarray) -> Batch:
        return Batch(
            feat_a=self.feat_a[idx],
            feat_b=self.feat_b[idx],
            prefixes=self.prefixes[idx],
            lengths=self.lengths[idx],
            targets=self.targets[idx],
        )


def build_samples(
    rows: list[tuple[str, str]],
    vocab: Vocabulary,
    max_len: int,
    store_a: FeatureStore,
    store_b: FeatureStore,
) -> SampleSet:
    names = [name for name, _ in rows]
    mat_a = store_a.matrix(names).astype(np.float64)
    mat_b = store_b.matrix(names).astype(np.float64)
    feat_a, feat_b, prefixes, lengths, targets = [], [], [], [], []
    for i, (_, caption) in enumerate(rows):
        encoded = encode_caption(vocab, tag_caption(normalize_caption(caption)), max_len)
        for prefix, target in expand_training_pairs(encoded):
            feat_a.append(mat_a[i])
            feat_b.append(mat_b[i])
            prefixes.append(prefix.indices)
            lengths.append(prefix.true_length)
            targets.append(target)
    return SampleSet(
        feat_a=np.stack(feat_a),
        feat_b=np.stack(feat_b),
        prefixes=np.stack(prefixes),
        lengths=np.asarray(lengths, dtype=np.int64),
        targets=np.asarray(targets, dtype=np.int64),
    )


def dataset_loss(
    params: CaptionerParams,
    arch: ArchitectureConfig,
    samples: SampleSet,
    chunk: int = 256,
) -> float:
    """Mean per-sample cross-entropy with dropout off."""
    total = 0.0
    for start in range(0, samples.size, chunk):
        idx = np.arange(start, min(start + chunk, samples.size))
        total += batch_loss(params, arch, samples.subset(idx)) * idx.size
    return total / samples.size


def _validation_loss(
    params: CaptionerParams, arch: ArchitectureConfig, samples: SampleSet
) -> float:
    """Validation metric for early stopping; module-level so tests can stub it."""
    return dataset_loss(params, arch, samples)


@dataclass
class TrainResult:
    params: CaptionerParams
    arch: ArchitectureConfig
    vocab: Vocabulary
    history: TrainingHistory


def train(
    rows: list[tuple[str, str]],
    store_a: FeatureStore,
    store_b: FeatureStore,
    cfg: TrainingConfig,
    arch_options: dict | None = None,
    vocab: Vocabulary | None = None,
) -> TrainResult:
    """Train a captioner on manifest rows backed by two feature stores.

    The vocabulary defaults to one built from the training split only, so
    validation words unseen in training map to <UNK> instead of leaking.
    Architecture dims for the feature streams and sequence length come
    from the stores and the captions; ``arch_options`` carries the rest
    (rnn_kind, bidirectional, widths, dropout_rate).
    """
    train_rows, val_rows = split_rows(rows, cfg.split_fraction, cfg.seed)
    if vocab is None:
        vocab = build_vocabulary(
            [tag_caption(normalize_caption(c)) for _, c in train_rows]
        )
    options = dict(arch_options or {})
    max_len = options.pop("max_len", vocab.max_caption_length)
    arch = ArchitectureConfig(
        vocab_size=vocab.size + 1,
        max_len=max_len,
        dim_a=store_a.dim,
        dim_b=store_b.dim,
        **options,
    )
    train_samples = build_samples(train_rows, vocab, arch.max_len, store_a, store_b)
    val_samples = build_samples(val_rows, vocab, arch.max_len, store_a, store_b)

    params = init_params(arch, cfg.seed)
    state = AdamState.for_params(params)
    history = TrainingHistory()
    best_val = np.inf
    best_params: CaptionerParams | None = None
    bad_streak = 0
    stop_reason = "max_epochs"
    stopped_epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(train_samples.size)
        for batch_idx, start in enumerate(range(0, order.size, cfg.batch_size)):
            batch = train_samples.subset(order[start : start + cfg.batch_size])
            grads = backward(
                params, arch, batch,
                dropout_seed=[cfg.seed, 3, epoch, batch_idx], mode=TRAIN,
            )
            params, state = adam_step(params, grads, state, cfg)

        train_loss = dataset_loss(params, arch, train_samples)
        val_loss = _validation_loss(params, arch, val_samples)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        stopped_epoch = epoch

        if val_loss < best_val:
            best_val = val_loss
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= cfg.patience:
                stop_reason = "patience"
                break

    history.stopped_epoch = stopped_epoch
    history.stop_reason = stop_reason
    if cfg.restore_best and best_params is not None:
        params = best_params
    return TrainResult(params=params, arch=arch, vocab=vocab, history=history)
