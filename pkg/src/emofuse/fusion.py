"""Fusing the two encoders: shallow CLS concatenation and co-attention.

Shallow fusion concatenates the two CLS vectors (speech first) and applies a
single linear head. Co-attentional fusion first lets each modality's CLS
attend, as a single multi-head query, over the other modality's full hidden
sequence; the attended vector is projected and added residually onto the
original CLS, and the two modified CLS vectors then go through the same kind
of linear head. With zero-initialized attention parameters the residual path
makes co-attentional fusion collapse exactly onto shallow fusion.

Internally each direction projects the other modality's sequence into the
query modality's dimension, so per-direction parameter counts are
2*d_q^2 + 2*d_q*d_kv + 4*d_q regardless of head count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import EncoderOutput, EncoderState
from .errors import ConfigError, InputError

FUSION_KINDS = ("shallow", "coattn", "speech-only", "text-only")

INIT_STD = 0.02


class LinearHead:
    """Single fully connected layer from a feature vector to logits."""

    def __init__(self, w: T.Tensor, b: T.Tensor):
        if w.data.ndim != 2 or b.data.shape != (1, w.data.shape[1]):
            raise ConfigError(f"inconsistent head shapes {w.shape} / {b.shape}")
        self.w = w
        self.b = b

    @classmethod
    def init(cls, in_dim: int, n_outputs: int, rng: np.random.Generator) -> "LinearHead":
        return cls(
            T.Tensor(rng.normal(0.0, INIT_STD, size=(in_dim, n_outputs)), requires_grad=True),
            T.Tensor(np.zeros((1, n_outputs)), requires_grad=True),
        )

    @classmethod
    def zeros(cls, in_dim: int, n_outputs: int) -> "LinearHead":
        return cls(
            T.Tensor(np.zeros((in_dim, n_outputs)), requires_grad=True),
            T.Tensor(np.zeros((1, n_outputs)), requires_grad=True),
        )

    @property
    def in_dim(self) -> int:
        return self.w.data.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.w.data.shape[1]

    def param_count(self) -> int:
        return self.w.size + self.b.size

    def params(self) -> dict[str, T.Tensor]:
        return {"w": self.w, "b": self.b}

    def apply(self, features: T.Tensor) -> T.Tensor:
        if features.data.shape[1] != self.in_dim:
            raise ConfigError(
                f"head expects {self.in_dim} input features, got {features.data.shape[1]}"
            )
        return T.matmul(features, self.w) + self.b


def shallow_head_param_count(d_speech: int, d_text: int, n_outputs: int) -> int:
    """(d_speech + d_text) * n_outputs weights plus n_outputs biases."""
    return (d_speech + d_text) * n_outputs + n_outputs


@dataclass
class FusionOutput:
    """Logits for one example, with optional per-direction attention weights."""

    logits: T.Tensor
    attention: dict[str, np.ndarray] | None = None


class CoAttentionBlock:
    """Cross-modal attention parameters for both directions.

    Direction names: "sq" queries from the speech CLS over the text sequence,
    "tq" queries from the text CLS over the speech sequence.
    """

    _PROJECTIONS = ("q", "k", "v", "o")

    def __init__(self, d_speech: int, d_text: int, n_heads: int, params: dict[str, T.Tensor]):
        if d_speech % n_heads != 0 or d_text % n_heads != 0:
            raise ConfigError(
                f"n_heads {n_heads} must divide both d_speech {d_speech} and d_text {d_text}"
            )
        self.d_speech = d_speech
        self.d_text = d_text
        self.n_heads = n_heads
        self.params = params

    @classmethod
    def shapes(cls, d_speech: int, d_text: int) -> list[tuple[str, tuple[int, int]]]:
        out: list[tuple[str, tuple[int, int]]] = []
        for pfx, d_q, d_kv in (("sq", d_speech, d_text), ("tq", d_text, d_speech)):
            out.append((f"{pfx}.q_w", (d_q, d_q)))
            out.append((f"{pfx}.q_b", (1, d_q)))
            out.append((f"{pfx}.k_w", (d_kv, d_q)))
            out.append((f"{pfx}.k_b", (1, d_q)))
            out.append((f"{pfx}.v_w", (d_kv, d_q)))
            out.append((f"{pfx}.v_b", (1, d_q)))
            out.append((f"{pfx}.o_w", (d_q, d_q)))
            out.append((f"{pfx}.o_b", (1, d_q)))
        return out

    @classmethod
    def init(cls, d_speech: int, d_text: int, n_heads: int, rng: np.random.Generator) -> "CoAttentionBlock":
        params = {}
        for name, shape in cls.shapes(d_speech, d_text):
            if name.endswith("_b"):
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, INIT_STD, size=shape)
            params[name] = T.Tensor(data, requires_grad=True)
        return cls(d_speech, d_text, n_heads, params)

    @classmethod
    def zeros(cls, d_speech: int, d_text: int, n_heads: int) -> "CoAttentionBlock":
        return cls(d_speech, d_text, n_heads, {
            name: T.Tensor(np.zeros(shape), requires_grad=True)
            for name, shape in cls.shapes(d_speech, d_text)
        })

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def coattention_param_count(d_speech: int, d_text: int) -> int:
    """Closed form for the block above; head count does not enter."""
    per_dir = lambda d_q, d_kv: 2 * d_q * d_q + 2 * d_q * d_kv + 4 * d_q
    return per_dir(d_speech, d_text) + per_dir(d_text, d_speech)


def _attend_single_query(cls_vec, sequence, params, prefix, n_heads,
                         drop_rate, train_mode, rng):
    """One direction: the CLS queries the other modality's sequence."""
    q = T.matmul(cls_vec, params[f"{prefix}.q_w"]) + params[f"{prefix}.q_b"]
    k = T.matmul(sequence, params[f"{prefix}.k_w"]) + params[f"{prefix}.k_b"]
    v = T.matmul(sequence, params[f"{prefix}.v_w"]) + params[f"{prefix}.v_b"]
    d_q = q.data.shape[1]
    dh = d_q // n_heads
    ctx = []
    weights = np.empty((n_heads, sequence.data.shape[0]))
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        scores = T.scale(
            T.matmul(T.slice_cols(q, lo, hi), T.transpose(T.slice_cols(k, lo, hi))),
            1.0 / math.sqrt(dh),
        )
        attn = T.softmax_rows(scores)
        weights[h] = attn.data[0]
        ctx.append(T.matmul(attn, T.slice_cols(v, lo, hi)))
    projected = T.matmul(T.concat_cols(ctx), params[f"{prefix}.o_w"]) + params[f"{prefix}.o_b"]
    projected = T.dropout(projected, drop_rate, rng, train_mode)
    return cls_vec + projected, weights


def co_attend(
    speech_out: EncoderOutput,
    text_out: EncoderOutput,
    block: CoAttentionBlock,
    drop_rate: float = 0.0,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[T.Tensor, T.Tensor, dict[str, np.ndarray]]:
    """Modify both CLS vectors by single-query cross-attention with residual add.

    Returns (modified speech CLS, modified text CLS, attention weights per
    direction, each [n_heads x other_sequence_length]).
    """
    if speech_out.hidden.data.shape[0] < 1 or text_out.hidden.data.shape[0] < 1:
        raise InputError("co_attend needs non-empty sequences in both modalities")
    cls_s, attn_s = _attend_single_query(
        speech_out.cls, text_out.hidden, block.params, "sq", block.n_heads,
        drop_rate, train_mode, rng)
    cls_t, attn_t = _attend_single_query(
        text_out.cls, speech_out.hidden, block.params, "tq", block.n_heads,
        drop_rate, train_mode, rng)
    return cls_s, cls_t, {"speech_to_text": attn_s, "text_to_speech": attn_t}


def shallow_fuse(speech_out: EncoderOutput, text_out: EncoderOutput, head: LinearHead) -> FusionOutput:
    """Concatenate the two CLS vectors (speech first) and apply the head."""
    features = T.concat_cols([speech_out.cls, text_out.cls])
    return FusionOutput(logits=head.apply(features))


def co_attention_fuse(
    speech_out: EncoderOutput,
    text_out: EncoderOutput,
    block: CoAttentionBlock,
    head: LinearHead,
    drop_rate: float = 0.0,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> FusionOutput:
    """Co-attend, then concatenate the modified CLS vectors into the head."""
    cls_s, cls_t, attn = co_attend(speech_out, text_out, block, drop_rate, train_mode, rng)
    features = T.concat_cols([cls_s, cls_t])
    return FusionOutput(logits=head.apply(features), attention=attn)


def unimodal_head(cls_vec: T.Tensor, head: LinearHead) -> FusionOutput:
    """Classify from a single modality's CLS vector."""
    return FusionOutput(logits=head.apply(cls_vec))


class FusionModel:
    """One encoder pair plus a fusion mechanism and its classification head."""

    def __init__(
        self,
        kind: str,
        head: LinearHead,
        speech: EncoderState | None = None,
        text: EncoderState | None = None,
        block: CoAttentionBlock | None = None,
        fusion_dropout: float = 0.0,
    ):
        if kind not in FUSION_KINDS:
            raise ConfigError(f"fusion kind must be one of {FUSION_KINDS}, got {kind!r}")
        if kind != "text-only" and speech is None:
            raise ConfigError(f"{kind} fusion needs a speech encoder")
        if kind != "speech-only" and text is None:
            raise ConfigError(f"{kind} fusion needs a text encoder")
        if kind == "coattn" and block is None:
            raise ConfigError("coattn fusion needs a CoAttentionBlock")
        self.kind = kind
        self.head = head
        self.speech = speech
        self.text = text
        self.block = block if kind == "coattn" else None
        self.fusion_dropout = fusion_dropout

    @property
    def needs_speech(self) -> bool:
        return self.kind != "text-only"

    @property
    def needs_text(self) -> bool:
        return self.kind != "speech-only"

    def named_params(self) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        if self.speech is not None:
            out.update({f"speech.{n}": p for n, p in self.speech.params.items()})
        if self.text is not None:
            out.update({f"text.{n}": p for n, p in self.text.params.items()})
        if self.block is not None:
            out.update({f"fusion.block.{n}": p for n, p in self.block.params.items()})
        out.update({f"fusion.head.{n}": p for n, p in self.head.params().items()})
        return out

    def fuse(
        self,
        speech_out: EncoderOutput | None,
        text_out: EncoderOutput | None,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> FusionOutput:
        if self.kind == "shallow":
            return shallow_fuse(speech_out, text_out, self.head)
        if self.kind == "coattn":
            return co_attention_fuse(
                speech_out, text_out, self.block, self.head,
                self.fusion_dropout, train_mode, rng)
        if self.kind == "speech-only":
            return unimodal_head(speech_out.cls, self.head)
        return unimodal_head(text_out.cls, self.head)
