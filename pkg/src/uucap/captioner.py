"""The merge captioner: dual feature projections + token embedding fused
along the time axis, a (bi)directional recurrent encoder, and a softmax
classifier head, with analytically derived gradients.

Parameters live in a flat dict of float32 arrays whose key order (given by
``param_shapes``) is the canonical serialization order:

    proj_a.W, proj_a.b, proj_b.W, proj_b.b, embed.E,
    rnn.<dir>.{W,U,b}_<gate> for dir in (fwd[, bwd]), gate in
        (z, r, h) for GRU / (i, f, c, o) for LSTM,
    head.W, head.b, out.W, out.b

All internal arithmetic runs in float64 (float32 storage upcasts exactly),
so checkpoints round-trip bit-identically while gradients stay accurate
enough for central-difference verification.

Shapes follow the row-vector convention: x @ W + h @ U + b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .text import PAD_INDEX, TokenSequence, Vocabulary, decode_tokens

GRU = "GRU"
LSTM = "LSTM"
GATE_NAMES = {GRU: ("z", "r", "h"), LSTM: ("i", "f", "c", "o")}
TRAIN = "train"
INFER = "infer"

CaptionerParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class ArchitectureConfig:
    """Layer widths and cell choice for one captioner instance."""

    vocab_size: int
    max_len: int = 54
    dim_a: int = 1920
    dim_b: int = 4800
    proj_dim: int = 256
    embed_dim: int = 256
    rnn_hidden_per_direction: int = 128
    rnn_kind: str = GRU
    bidirectional: bool = True
    dropout_rate: float = 0.5
    head_dim: int = 128

    def __post_init__(self):
        if self.proj_dim != self.embed_dim:
            raise ValueError(
                "proj_dim must equal embed_dim: feature steps and token "
                "embeddings share one sequence"
            )
        if self.rnn_kind not in GATE_NAMES:
            raise ValueError(f"rnn_kind must be GRU or LSTM, got {self.rnn_kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4 (pad/<START>/<END>/<UNK>)")
        for name in ("max_len", "dim_a", "dim_b", "proj_dim", "rnn_hidden_per_direction", "head_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    @property
    def fused_dim(self) -> int:
        return len(self.directions) * self.rnn_hidden_per_direction

    @property
    def seq_len(self) -> int:
        # two projected-feature steps prepended to the token steps
        return 2 + self.max_len

    @classmethod
    def for_vocabulary(cls, vocab: Vocabulary, **overrides) -> "ArchitectureConfig":
        """Config sized to a vocabulary: one padding slot plus its words."""
        overrides.setdefault("max_len", vocab.max_caption_length)
        return cls(vocab_size=vocab.size + 1, **overrides)


def param_shapes(cfg: ArchitectureConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in serialization order."""
    p, h = cfg.proj_dim, cfg.rnn_hidden_per_direction
    shapes: dict[str, tuple[int, ...]] = {
        "proj_a.W": (cfg.dim_a, p),
        "proj_a.b": (p,),
        "proj_b.W": (cfg.dim_b, p),
        "proj_b.b": (p,),
        "embed.E": (cfg.vocab_size, cfg.embed_dim),
    }
    for d in cfg.directions:
        for g in GATE_NAMES[cfg.rnn_kind]:
            shapes[f"rnn.{d}.W_{g}"] = (p, h)
            shapes[f"rnn.{d}.U_{g}"] = (h, h)
            shapes[f"rnn.{d}.b_{g}"] = (h,)
    shapes["head.W"] = (cfg.fused_dim, cfg.head_dim)
    shapes["head.b"] = (cfg.head_dim,)
    shapes["out.W"] = (cfg.head_dim, cfg.vocab_size)
    shapes["out.b"] = (cfg.vocab_size,)
    return shapes


def init_params(cfg: ArchitectureConfig, seed: int) -> CaptionerParams:
    """Glorot-uniform weights, zero biases, zero padding-embedding row."""
    rng = np.random.default_rng([seed, 0])
    params: CaptionerParams = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    params["embed.E"][PAD_INDEX] = 0.0
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def _dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


@dataclass
class Batch:
    """A minibatch of expanded next-word samples."""

    feat_a: np.ndarray  # (B, dim_a)
    feat_b: np.ndarray  # (B, dim_b)
    prefixes: np.ndarray  # (B, max_len) int32, zero-padded
    lengths: np.ndarray  # (B,) tokens before padding
    targets: np.ndarray  # (B,) target word indices, never 0

    @property
    def size(self) -> int:
        return self.feat_a.shape[0]


def _check_dims(cfg: ArchitectureConfig, batch: Batch) -> None:
    if batch.feat_a.shape[1] != cfg.dim_a:
        raise ValueError(f"stream A dim {batch.feat_a.shape[1]} != configured {cfg.dim_a}")
    if batch.feat_b.shape[1] != cfg.dim_b:
        raise ValueError(f"stream B dim {batch.feat_b.shape[1]} != configured {cfg.dim_b}")
    if batch.prefixes.shape[1] != cfg.max_len:
        raise ValueError(f"prefix length {batch.prefixes.shape[1]} != configured {cfg.max_len}")
    if batch.prefixes.min(initial=0) < 0 or batch.prefixes.max(initial=0) >= cfg.vocab_size:
        raise ValueError("prefix contains indices outside the vocabulary")


def _run_rnn(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    direction: str,
    X: np.ndarray,
    mask: np.ndarray,
    want_cache: bool,
):
    """One direction of the recurrence over the fused sequence.

    X is (B, T, P); mask is (B, T) with 1 on live steps. The backward
    direction simply consumes time steps in reverse order; masked steps
    pass the state through unchanged, which makes the final state
    independent of how much padding the sequence carries.
    """
    B, T, _ = X.shape
    H = cfg.rnn_hidden_per_direction
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    order = range(T) if direction == "fwd" else range(T - 1, -1, -1)
    w = {g: params[f"rnn.{direction}.W_{g}"] for g in GATE_NAMES[cfg.rnn_kind]}
    u = {g: params[f"rnn.{direction}.U_{g}"] for g in GATE_NAMES[cfg.rnn_kind]}
    b = {g: params[f"rnn.{direction}.b_{g}"] for g in GATE_NAMES[cfg.rnn_kind]}
    steps = []
    for t in order:
        x = X[:, t, :]
        m = mask[:, t : t + 1]
        if cfg.rnn_kind == GRU:
            z = _sigmoid(x @ w["z"] + h @ u["z"] + b["z"])
            r = _sigmoid(x @ w["r"] + h @ u["r"] + b["r"])
            hc = np.tanh(x @ w["h"] + (r * h) @ u["h"] + b["h"])
            h_new = z * h + (1.0 - z) * hc
            if want_cache:
                steps.append({"t": t, "x": x, "m": m, "h_prev": h, "z": z, "r": r, "hc": hc})
            h = m * h_new + (1.0 - m) * h
        else:
            i = _sigmoid(x @ w["i"] + h @ u["i"] + b["i"])
            f = _sigmoid(x @ w["f"] + h @ u["f"] + b["f"])
            g = np.tanh(x @ w["c"] + h @ u["c"] + b["c"])
            o = _sigmoid(x @ w["o"] + h @ u["o"] + b["o"])
            c_new = f * c + i * g
            h_new = o * np.tanh(c_new)
            if want_cache:
                steps.append(
                    {
                        "t": t, "x": x, "m": m, "h_prev": h, "c_prev": c,
                        "i": i, "f": f, "g": g, "o": o, "c_new": c_new,
                    }
                )
            c = m * c_new + (1.0 - m) * c
            h = m * h_new + (1.0 - m) * h
    return h, steps


def _forward_batch(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    batch: Batch,
    mode: str,
    dropout_seed,
    want_cache: bool = False,
):
    """Batched forward pass; returns (probs, cache)."""
    if mode not in (TRAIN, INFER):
        raise ValueError(f"mode must be '{TRAIN}' or '{INFER}', got {mode!r}")
    _check_dims(cfg, batch)
    feat_a = np.asarray(batch.feat_a, dtype=np.float64)
    feat_b = np.asarray(batch.feat_b, dtype=np.float64)
    B = batch.size

    sa = feat_a @ params["proj_a.W"] + params["proj_a.b"]
    xa = np.maximum(sa, 0.0)
    sb = feat_b @ params["proj_b.W"] + params["proj_b.b"]
    xb = np.maximum(sb, 0.0)
    emb = np.asarray(params["embed.E"], dtype=np.float64)[batch.prefixes]
    X = np.concatenate([xa[:, None, :], xb[:, None, :], emb], axis=1)

    T = cfg.seq_len
    mask = (np.arange(T)[None, :] < (2 + np.asarray(batch.lengths))[:, None]).astype(np.float64)

    use_dropout = mode == TRAIN and cfg.dropout_rate > 0.0
    if use_dropout:
        if dropout_seed is None:
            raise ValueError("train mode with dropout needs a dropout_seed")
        rng = np.random.default_rng(dropout_seed)

    finals = {}
    rnn_caches = {}
    for d in cfg.directions:
        finals[d], rnn_caches[d] = _run_rnn(params, cfg, d, X, mask, want_cache)
    fused = np.concatenate([finals[d] for d in cfg.directions], axis=1)

    d1_mask = _dropout_mask(rng, fused.shape, cfg.dropout_rate) if use_dropout else 1.0
    d1 = fused * d1_mask
    sh = d1 @ params["head.W"] + params["head.b"]
    hh = np.maximum(sh, 0.0)
    d2_mask = _dropout_mask(rng, hh.shape, cfg.dropout_rate) if use_dropout else 1.0
    d2 = hh * d2_mask
    logits = d2 @ params["out.W"] + params["out.b"]
    probs = _softmax(logits)

    cache = None
    if want_cache:
        cache = {
            "sa": sa, "sb": sb, "X": X, "mask": mask, "rnn": rnn_caches,
            "fused": fused, "d1_mask": d1_mask, "d1": d1, "sh": sh,
            "d2_mask": d2_mask, "d2": d2, "logits": logits, "probs": probs,
        }
    return probs, cache


def forward(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    feat_a: np.ndarray,
    feat_b: np.ndarray,
    prefix: TokenSequence,
    mode: str = INFER,
    dropout_seed=None,
) -> np.ndarray:
    """Probability over the next word for a single sample."""
    if len(prefix.indices) != cfg.max_len:
        raise ValueError(f"prefix length {len(prefix.indices)} != configured {cfg.max_len}")
    batch = Batch(
        feat_a=np.asarray(feat_a, dtype=np.float64).reshape(1, -1),
        feat_b=np.asarray(feat_b, dtype=np.float64).reshape(1, -1),
        prefixes=prefix.indices.reshape(1, -1),
        lengths=np.array([prefix.true_length]),
        targets=np.zeros(1, dtype=np.int32),
    )
    probs, _ = _forward_batch(params, cfg, batch, mode, dropout_seed)
    return probs[0]


def loss(prob: np.ndarray, target: int) -> float:
    """Categorical cross-entropy against one target word index."""
    if target == PAD_INDEX:
        raise ValueError("padding (index 0) can never be a prediction target")
    if not 0 < target < prob.shape[0]:
        raise ValueError(f"target {target} outside the distribution of size {prob.shape[0]}")
    return float(-np.log(prob[target]))


def batch_loss(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    batch: Batch,
    mode: str = INFER,
    dropout_seed=None,
) -> float:
    """Mean cross-entropy of a batch, computed from logits for stability."""
    if np.any(batch.targets == PAD_INDEX):
        raise ValueError("padding (index 0) can never be a prediction target")
    _, cache = _forward_batch(params, cfg, batch, mode, dropout_seed, want_cache=True)
    logits = cache["logits"]
    lse = np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1)) + logits.max(axis=1)
    picked = logits[np.arange(batch.size), batch.targets]
    return float(np.mean(lse - picked))


def expand_training_pairs(encoded: TokenSequence) -> list[tuple[TokenSequence, int]]:
    """Next-word samples: every proper prefix paired with its next token."""
    if encoded.true_length < 2:
        raise ValueError("caption too short to expand (needs at least 2 tokens)")
    max_len = len(encoded.indices)
    samples = []
    for t in range(1, encoded.true_length):
        prefix = np.zeros(max_len, dtype=np.int32)
        prefix[:t] = encoded.indices[:t]
        target = int(encoded.indices[t])
        if target == PAD_INDEX:
            raise ValueError("padding inside the live token range")
        samples.append((TokenSequence(prefix, t), target))
    return samples


def _rnn_backward(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    direction: str,
    steps: list[dict],
    d_final: np.ndarray,
    grads: CaptionerParams,
    dX: np.ndarray,
) -> None:
    """Backpropagation through time for one direction (reversed step order)."""
    names = GATE_NAMES[cfg.rnn_kind]
    w = {g: params[f"rnn.{direction}.W_{g}"] for g in names}
    u = {g: params[f"rnn.{direction}.U_{g}"] for g in names}
    gw = {g: grads[f"rnn.{direction}.W_{g}"] for g in names}
    gu = {g: grads[f"rnn.{direction}.U_{g}"] for g in names}
    gb = {g: grads[f"rnn.{direction}.b_{g}"] for g in names}
    dh = d_final
    dc = np.zeros_like(d_final)
    for step in reversed(steps):
        t, x, m, h_prev = step["t"], step["x"], step["m"], step["h_prev"]
        if cfg.rnn_kind == GRU:
            z, r, hc = step["z"], step["r"], step["hc"]
            dh_new = dh * m
            dh_prev = dh * (1.0 - m)
            dz = dh_new * (h_prev - hc)
            dhc = dh_new * (1.0 - z)
            dh_prev += dh_new * z
            dah = dhc * (1.0 - hc * hc)
            gw["h"] += x.T @ dah
            gu["h"] += (r * h_prev).T @ dah
            gb["h"] += dah.sum(axis=0)
            drh = dah @ u["h"].T
            dh_prev += drh * r
            dar = (drh * h_prev) * r * (1.0 - r)
            gw["r"] += x.T @ dar
            gu["r"] += h_prev.T @ dar
            gb["r"] += dar.sum(axis=0)
            dh_prev += dar @ u["r"].T
            daz = dz * z * (1.0 - z)
            gw["z"] += x.T @ daz
            gu["z"] += h_prev.T @ daz
            gb["z"] += daz.sum(axis=0)
            dh_prev += daz @ u["z"].T
            dX[:, t, :] += dah @ w["h"].T + dar @ w["r"].T + daz @ w["z"].T
            dh = dh_prev
        else:
            c_prev, i, f, g, o, c_new = (
                step["c_prev"], step["i"], step["f"], step["g"], step["o"], step["c_new"],
            )
            dh_new = dh * m
            dh_prev = dh * (1.0 - m)
            dc_new = dc * m
            dc_prev = dc * (1.0 - m)
            tnc = np.tanh(c_new)
            do = dh_new * tnc
            dc_new += dh_new * o * (1.0 - tnc * tnc)
            df = dc_new * c_prev
            dc_prev += dc_new * f
            di = dc_new * g
            dg = dc_new * i
            dai = di * i * (1.0 - i)
            daf = df * f * (1.0 - f)
            dac = dg * (1.0 - g * g)
            dao = do * o * (1.0 - o)
            for gate, da in (("i", dai), ("f", daf), ("c", dac), ("o", dao)):
                gw[gate] += x.T @ da
                gu[gate] += h_prev.T @ da
                gb[gate] += da.sum(axis=0)
                dh_prev += da @ u[gate].T
                dX[:, t, :] += da @ w[gate].T
            dh = dh_prev
            dc = dc_prev


def backward(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    batch: Batch,
    dropout_seed=None,
    mode: str = TRAIN,
) -> CaptionerParams:
    """Gradients of the mean batch loss for every parameter tensor."""
    if np.any(batch.targets == PAD_INDEX):
        raise ValueError("padding (index 0) can never be a prediction target")
    probs, cache = _forward_batch(params, cfg, batch, mode, dropout_seed, want_cache=True)
    B = batch.size
    H = cfg.rnn_hidden_per_direction

    grads: CaptionerParams = {
        name: np.zeros(shape) for name, shape in param_shapes(cfg).items()
    }

    dlogits = probs.copy()
    dlogits[np.arange(B), batch.targets] -= 1.0
    dlogits /= B

    grads["out.W"] += cache["d2"].T @ dlogits
    grads["out.b"] += dlogits.sum(axis=0)
    dd2 = dlogits @ params["out.W"].T
    dhh = dd2 * cache["d2_mask"]
    dsh = dhh * (cache["sh"] > 0.0)
    grads["head.W"] += cache["d1"].T @ dsh
    grads["head.b"] += dsh.sum(axis=0)
    dd1 = dsh @ params["head.W"].T
    dfused = dd1 * cache["d1_mask"]

    dX = np.zeros_like(cache["X"])
    for k, d in enumerate(cfg.directions):
        d_final = dfused[:, k * H : (k + 1) * H]
        _rnn_backward(params, cfg, d, cache["rnn"][d], d_final, grads, dX)

    dxa = dX[:, 0, :] * (cache["sa"] > 0.0)
    grads["proj_a.W"] += np.asarray(batch.feat_a, dtype=np.float64).T @ dxa
    grads["proj_a.b"] += dxa.sum(axis=0)
    dxb = dX[:, 1, :] * (cache["sb"] > 0.0)
    grads["proj_b.W"] += np.asarray(batch.feat_b, dtype=np.float64).T @ dxb
    grads["proj_b.b"] += dxb.sum(axis=0)

    np.add.at(grads["embed.E"], batch.prefixes, dX[:, 2:, :])
    grads["embed.E"][PAD_INDEX] = 0.0
    return grads


def greedy_caption(
    params: CaptionerParams,
    cfg: ArchitectureConfig,
    vocab: Vocabulary,
    feat_a: np.ndarray,
    feat_b: np.ndarray,
    max_len: int | None = None,
) -> str:
    """Argmax decoding from <START>; stops at <END> or the length cap.

    Ties break to the lowest word index; the padding slot is never a word
    and is excluded from the argmax.
    """
    if max_len is None:
        max_len = cfg.max_len
    max_len = min(max_len, cfg.max_len)  # prefixes cannot outgrow the model
    indices = [vocab.start_index]
    while len(indices) < max_len:
        prefix = np.zeros(cfg.max_len, dtype=np.int32)
        prefix[: len(indices)] = indices
        probs = forward(params, cfg, feat_a, feat_b, TokenSequence(prefix, len(indices)), INFER)
        nxt = int(np.argmax(probs[1:])) + 1
        indices.append(nxt)
        if nxt == vocab.end_index:
            break
    return decode_tokens(vocab, TokenSequence(np.asarray(indices, dtype=np.int32), len(indices)))
