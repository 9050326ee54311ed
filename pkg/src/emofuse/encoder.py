"""Bidirectional transformer encoder over token sequences, plus the masked-token objective.

The same encoder is instantiated twice in the pipeline: once over discretized
speech tokens and once over text tokens. Blocks use pre-norm residual
ordering (attention then feed-forward), learned positional embeddings, and a
masked-prediction head weight-tied to the token embedding table, so the head
only adds a per-vocabulary bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError, UsageError
from .tokens import MASK, N_SPECIALS, TokenSequence

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters of one encoder."""

    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_len: int
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if min(self.n_layers, self.d_model, self.n_heads, self.d_ff, self.vocab_size) < 1:
            raise ConfigError("all size fields must be positive")


# Desk-scale defaults; the full-scale configs below stay constructible for
# shape and parameter-count checks but are never trained here.
SPEECH_DESK = EncoderConfig(n_layers=4, d_model=128, n_heads=4, d_ff=512,
                            vocab_size=N_SPECIALS + 256, max_len=256)
TEXT_DESK = EncoderConfig(n_layers=4, d_model=160, n_heads=4, d_ff=640,
                          vocab_size=2000, max_len=64)
SPEECH_FULL_SCALE = EncoderConfig(n_layers=12, d_model=768, n_heads=12, d_ff=3072,
                                  vocab_size=N_SPECIALS + 256, max_len=2048)
TEXT_FULL_SCALE = EncoderConfig(n_layers=24, d_model=1024, n_heads=16, d_ff=4096,
                                vocab_size=2000, max_len=512)


def parameter_shapes(cfg: EncoderConfig) -> Iterator[tuple[str, tuple[int, ...], str]]:
    """Yield (name, shape, kind) for every parameter, in checkpoint order.

    kind is one of "weight" (normal init), "bias" (zeros), "gain" (ones).
    """
    d, f = cfg.d_model, cfg.d_ff
    yield "tok_emb", (cfg.vocab_size, d), "weight"
    yield "pos_emb", (cfg.max_len, d), "weight"
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        yield f"{p}.ln1.g", (1, d), "gain"
        yield f"{p}.ln1.b", (1, d), "bias"
        for proj in ("wq", "wk", "wv", "wo"):
            yield f"{p}.attn.{proj}", (d, d), "weight"
        for b in ("bq", "bk", "bv", "bo"):
            yield f"{p}.attn.{b}", (1, d), "bias"
        yield f"{p}.ln2.g", (1, d), "gain"
        yield f"{p}.ln2.b", (1, d), "bias"
        yield f"{p}.ff.w1", (d, f), "weight"
        yield f"{p}.ff.b1", (1, f), "bias"
        yield f"{p}.ff.w2", (f, d), "weight"
        yield f"{p}.ff.b2", (1, d), "bias"
    yield "final_ln.g", (1, d), "gain"
    yield "final_ln.b", (1, d), "bias"
    yield "mlm_bias", (1, cfg.vocab_size), "bias"


def param_count(cfg: EncoderConfig) -> int:
    """Exact parameter count as a closed form of the config.

    vocab*d (tied embeddings/output) + max_len*d (positions)
    + n_layers * (4d^2 + 4d attention, 4d for the two norms,
                  2*d*d_ff + d_ff + d feed-forward)
    + 2d final norm + vocab output bias.
    """
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    per_layer = 4 * d * d + 4 * d + 4 * d + 2 * d * f + f + d
    return v * d + cfg.max_len * d + cfg.n_layers * per_layer + 2 * d + v


class EncoderState:
    """Learnable parameters of one encoder, keyed by name in checkpoint order."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, T.Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator) -> "EncoderState":
        """Fresh state: normal(0, 0.02) weights, zero biases, unit norm gains."""
        params: dict[str, T.Tensor] = {}
        for name, shape, kind in parameter_shapes(cfg):
            if kind == "weight":
                data = rng.normal(0.0, INIT_STD, size=shape)
            elif kind == "gain":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            params[name] = T.Tensor(data, requires_grad=True)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: EncoderConfig) -> "EncoderState":
        """All-zero state (gains included); for shape and counting checks."""
        return cls(cfg, {
            name: T.Tensor(np.zeros(shape), requires_grad=True)
            for name, shape, _ in parameter_shapes(cfg)
        })

    def actual_param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise InputError(f"missing parameter block {name!r}")
            if arrays[name].shape != p.data.shape:
                raise InputError(f"parameter {name}: shape {arrays[name].shape} != {p.data.shape}")
            p.data = arrays[name].astype(np.float64).copy()

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag


@dataclass
class EncoderOutput:
    """Hidden states [L x d_model]; row 0 is the CLS vector."""

    hidden: T.Tensor
    attentions: list[list[np.ndarray]] | None = None

    @property
    def cls(self) -> T.Tensor:
        return T.gather_rows(self.hidden, np.array([0]))


def _self_attention(x, prms, prefix, n_heads, collect):
    d = x.data.shape[1]
    dh = d // n_heads
    q = T.matmul(x, prms[f"{prefix}.wq"]) + prms[f"{prefix}.bq"]
    k = T.matmul(x, prms[f"{prefix}.wk"]) + prms[f"{prefix}.bk"]
    v = T.matmul(x, prms[f"{prefix}.wv"]) + prms[f"{prefix}.bv"]
    heads = []
    weights = [] if collect else None
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        scores = T.scale(
            T.matmul(T.slice_cols(q, lo, hi), T.transpose(T.slice_cols(k, lo, hi))),
            1.0 / math.sqrt(dh),
        )
        attn = T.softmax_rows(scores)
        if collect:
            weights.append(attn.data.copy())
        heads.append(T.matmul(attn, T.slice_cols(v, lo, hi)))
    out = T.matmul(T.concat_cols(heads), prms[f"{prefix}.wo"]) + prms[f"{prefix}.bo"]
    return out, weights


def forward(
    seq: TokenSequence,
    state: EncoderState,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    collect_attention: bool = False,
) -> EncoderOutput:
    """Run the encoder over one sequence.

    Dropout applies only in train mode and draws from the caller's rng, so
    eval-mode forward is a pure function of (state, seq). Overlong sequences
    are rejected; truncation is the tokenizers' job.
    """
    cfg = state.cfg
    if len(seq) > cfg.max_len:
        raise InputError(f"sequence of length {len(seq)} exceeds max_len {cfg.max_len}")
    ids = np.asarray(seq.ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(f"token id outside vocabulary of size {cfg.vocab_size}")
    drop = cfg.dropout_rate if train_mode else 0.0
    if drop > 0.0 and rng is None:
        raise UsageError("train-mode forward with dropout needs an rng")

    prms = state.params
    x = T.gather_rows(prms["tok_emb"], ids) + T.gather_rows(prms["pos_emb"], np.arange(len(ids)))
    x = T.dropout(x, drop, rng, train_mode)
    attns: list[list[np.ndarray]] = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        h = T.layer_norm(x, prms[f"{p}.ln1.g"], prms[f"{p}.ln1.b"])
        a, w = _self_attention(h, prms, f"{p}.attn", cfg.n_heads, collect_attention)
        if collect_attention:
            attns.append(w)
        x = x + T.dropout(a, drop, rng, train_mode)
        h2 = T.layer_norm(x, prms[f"{p}.ln2.g"], prms[f"{p}.ln2.b"])
        f = T.matmul(T.gelu(T.matmul(h2, prms[f"{p}.ff.w1"]) + prms[f"{p}.ff.b1"]), prms[f"{p}.ff.w2"])
        f = f + prms[f"{p}.ff.b2"]
        x = x + T.dropout(f, drop, rng, train_mode)
    y = T.layer_norm(x, prms["final_ln.g"], prms["final_ln.b"])
    return EncoderOutput(hidden=y, attentions=attns if collect_attention else None)


def mask_corrupt(
    seq: TokenSequence,
    mask_rate: float,
    seed,
    vocab_size: int,
) -> tuple[TokenSequence, tuple[tuple[int, int], ...]]:
    """BERT-style corruption over non-special positions.

    Each eligible position is targeted independently with probability
    mask_rate; at least one is always targeted. Of the targeted positions,
    80% become MASK, 10% a random non-special token, 10% stay unchanged.
    Returns the corrupted sequence and (position, original_id) targets.
    seed accepts an int or an existing numpy Generator.
    """
    if not (0.0 < mask_rate <= 1.0):
        raise InputError(f"mask_rate must be in (0, 1], got {mask_rate}")
    if len(seq.body) < 1:
        raise InputError("cannot corrupt a CLS-only sequence")
    eligible = [i for i in range(1, len(seq)) if seq.ids[i] >= N_SPECIALS]
    if not eligible:
        raise InputError("sequence has no maskable (non-special) positions")
    rng = np.random.default_rng(seed)
    draws = rng.random(len(eligible))
    selected = [pos for pos, u in zip(eligible, draws) if u < mask_rate]
    if not selected:
        selected = [eligible[int(rng.integers(len(eligible)))]]
    new_ids = list(seq.ids)
    targets = []
    for pos in selected:
        targets.append((pos, seq.ids[pos]))
        r = rng.random()
        if r < 0.8:
            new_ids[pos] = MASK
        elif r < 0.9:
            new_ids[pos] = int(rng.integers(N_SPECIALS, vocab_size))
    return TokenSequence(seq.modality, tuple(new_ids)), tuple(targets)


def masked_lm_loss(
    state: EncoderState,
    corrupted: TokenSequence,
    targets: tuple[tuple[int, int], ...],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> T.Tensor:
    """Mean cross-entropy at the target positions against the original IDs.

    Prediction logits come from the weight-tied head: hidden @ tok_emb^T
    plus the per-vocabulary bias.
    """
    if not targets:
        raise InputError("masked_lm_loss needs at least one target position")
    out = forward(corrupted, state, train_mode=train_mode, rng=rng)
    positions = np.array([p for p, _ in targets], dtype=np.int64)
    originals = np.array([o for _, o in targets], dtype=np.int64)
    picked = T.gather_rows(out.hidden, positions)
    logits = T.matmul(picked, T.transpose(state.params["tok_emb"])) + state.params["mlm_bias"]
    return T.cross_entropy_rows(logits, originals)
