"""Optimization engine: Adam with warmup + polynomial decay, pretraining and fine-tuning.

Batch gradients are always formed by summing per-example gradients in
dataset order and dividing once by the batch size, so how an effective batch
is factored into microbatches cannot change the result, bitwise. Frozen
components run in eval mode (acting purely as feature extractors) and their
outputs are computed once per example and cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .encoder import EncoderState, forward, mask_corrupt, masked_lm_loss
from .errors import ConfigError, InputError, NumericError, UsageError
from .fusion import FusionModel
from .data import TokenizedExample
from .metrics import evaluate_classification, evaluate_scores
from .tokens import TokenSequence


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings.

    warmup_steps and total_steps may be left unset; run_finetune resolves
    total_steps from epochs and dataset size, and warmup defaults to 6% of
    total. peak_lr 1e-5, dropout 0.1, and batch_size 16 are the reference
    operating point for fine-tuning.
    """

    peak_lr: float = 1e-5
    warmup_steps: int | None = None
    total_steps: int | None = None
    end_lr: float = 0.0
    power: float = 1.0
    batch_size: int = 16
    accum_steps: int = 1
    dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    seed: int = 0
    freeze_speech: bool = False
    freeze_text: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.accum_steps < 1 or self.batch_size % self.accum_steps != 0:
            raise ConfigError("accum_steps must evenly divide batch_size")
        if self.total_steps is not None:
            w = self.warmup_steps if self.warmup_steps is not None else 0
            if w >= self.total_steps:
                raise ConfigError("warmup_steps must be smaller than total_steps")

    def resolved(self, total_steps: int | None = None) -> "TrainConfig":
        """Fill in total_steps / warmup_steps so lr_at can be evaluated."""
        total = self.total_steps if self.total_steps is not None else total_steps
        if total is None:
            raise ConfigError("total_steps is not set and no fallback was provided")
        warmup = self.warmup_steps if self.warmup_steps is not None else int(0.06 * total)
        return replace(self, total_steps=total, warmup_steps=warmup)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> peak over warmup, then polynomial decay to end_lr.

    Both formulas give peak_lr at the warmup boundary.
    """
    if cfg.total_steps is None or cfg.warmup_steps is None:
        raise UsageError("lr_at needs a resolved TrainConfig (total_steps and warmup_steps set)")
    if not (0 <= step <= cfg.total_steps):
        raise UsageError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if cfg.total_steps == cfg.warmup_steps:
        return cfg.peak_lr
    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.end_lr + (cfg.peak_lr - cfg.end_lr) * (1.0 - frac) ** cfg.power


@dataclass
class AdamState:
    """First/second moment accumulators per parameter, plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, T.Tensor]) -> "AdamState":
        return cls(
            m={n: np.zeros_like(p.data) for n, p in params.items()},
            v={n: np.zeros_like(p.data) for n, p in params.items()},
        )


def adam_step(
    params: dict[str, T.Tensor],
    grads: dict[str, np.ndarray],
    opt: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """Standard bias-corrected Adam update, in place."""
    if lr < 0.0:
        raise UsageError(f"learning rate must be non-negative, got {lr}")
    opt.step += 1
    bc1 = 1.0 - cfg.beta1 ** opt.step
    bc2 = 1.0 - cfg.beta2 ** opt.step
    for name, p in params.items():
        g = grads[name]
        if np.isnan(g).any():
            raise NumericError(f"NaN gradient for parameter {name!r}")
        opt.m[name] = cfg.beta1 * opt.m[name] + (1.0 - cfg.beta1) * g
        opt.v[name] = cfg.beta2 * opt.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = opt.m[name] / bc1
        v_hat = opt.v[name] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _clipped(grads: dict[str, np.ndarray], clip: float | None) -> dict[str, np.ndarray]:
    if clip is None:
        return grads
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= clip:
        return grads
    factor = clip / total
    return {n: g * factor for n, g in grads.items()}


def collect_gradients(params: dict[str, T.Tensor], batch_size: int) -> dict[str, np.ndarray]:
    """Accumulated gradients divided once by the batch size."""
    out = {}
    for name, p in params.items():
        if p.grad is None:
            out[name] = np.zeros_like(p.data)
        else:
            out[name] = p.grad / batch_size
    return out


def run_pretraining(
    corpus: list[TokenSequence],
    state: EncoderState,
    cfg: TrainConfig,
    mask_rate: float = 0.15,
    log_fn=None,
    opt: AdamState | None = None,
    start_step: int = 0,
) -> list[float]:
    """Masked-token pretraining over a token corpus; returns the loss curve.

    Every step samples batch_size sequences with replacement, corrupts them,
    and applies one Adam update at the scheduled rate. The first logged loss
    is evaluated before any update, so an untrained model logs roughly
    ln(vocab_size). Passing the returned AdamState and step back in resumes
    exactly.
    """
    if not corpus:
        raise InputError("pretraining corpus is empty")
    cfg = cfg.resolved()
    rng = np.random.default_rng(cfg.seed)
    params = state.params
    if opt is None:
        opt = AdamState.fresh(params)
        opt.step = start_step
    losses: list[float] = []
    for step in range(start_step + 1, cfg.total_steps + 1):
        idx = rng.integers(0, len(corpus), size=cfg.batch_size)
        T.zero_grads(params.values())
        total = 0.0
        for i in idx:
            corrupted, targets = mask_corrupt(corpus[i], mask_rate, rng, state.cfg.vocab_size)
            loss = masked_lm_loss(state, corrupted, targets, train_mode=True, rng=rng)
            T.backward(loss)
            total += loss.item()
        grads = _clipped(collect_gradients(params, cfg.batch_size), cfg.grad_clip)
        lr = lr_at(step, cfg)
        adam_step(params, grads, opt, lr, cfg)
        mean_loss = total / cfg.batch_size
        losses.append(mean_loss)
        if log_fn is not None:
            log_fn(step, lr, mean_loss)
    T.zero_grads(params.values())
    return losses


def overfit_one_batch(
    state: EncoderState,
    batch: list[TokenSequence],
    cfg: TrainConfig,
    mask_rate: float = 0.15,
    seed: int = 0,
) -> list[float]:
    """Sanity diagnostic: memorize one fixed corrupted batch.

    The batch is corrupted once up front and the very same (inputs, targets)
    repeat every step, with dropout disabled, so the returned loss curve is a
    deterministic Adam trajectory on a fixed objective. A healthy setup
    drives it well below ln(vocab_size) within a few hundred steps.
    """
    if not batch:
        raise InputError("overfit_one_batch needs a non-empty batch")
    cfg = cfg.resolved()
    rng = np.random.default_rng(seed)
    fixed = [mask_corrupt(seq, mask_rate, rng, state.cfg.vocab_size) for seq in batch]
    opt = AdamState.fresh(state.params)
    losses: list[float] = []
    for step in range(1, cfg.total_steps + 1):
        T.zero_grads(state.params.values())
        total = 0.0
        for corrupted, targets in fixed:
            loss = masked_lm_loss(state, corrupted, targets)
            T.backward(loss)
            total += loss.item()
        grads = _clipped(collect_gradients(state.params, len(batch)), cfg.grad_clip)
        adam_step(state.params, grads, opt, lr_at(step, cfg), cfg)
        losses.append(total / len(batch))
    T.zero_grads(state.params.values())
    return losses


def classification_loss(logits: T.Tensor, label: int) -> T.Tensor:
    """Cross-entropy over the per-class pair margins.

    The head emits a (negative, positive) logit pair per class; the class
    score is the pair margin, and softmax cross-entropy runs over those
    scores. The margin sign stays meaningful as the per-class binary
    decision, while training remains single-label.
    """
    n_out = logits.data.shape[1]
    if n_out % 2 != 0:
        raise ConfigError(f"classification head needs an even logit count, got {n_out}")
    n_classes = n_out // 2
    if not (0 <= label < n_classes):
        raise InputError(f"label {label} outside 0..{n_classes - 1}")
    pairs = T.reshape(logits, (n_classes, 2))
    margins = T.transpose(T.slice_cols(pairs, 1, 2) - T.slice_cols(pairs, 0, 1))
    return T.cross_entropy_rows(margins, [label])


def regression_loss(logits: T.Tensor, score: float) -> T.Tensor:
    return T.l1_loss(logits, [[score]])


def predict_class(logits_data: np.ndarray) -> int:
    """Class whose positive-vs-negative logit margin is largest."""
    margins = logits_data[0, 1::2] - logits_data[0, 0::2]
    return int(np.argmax(margins))


def predict_score(logits_data: np.ndarray) -> float:
    return float(logits_data[0, 0])


class _EncoderCache:
    """Eval-mode encoder outputs for frozen encoders, computed once per example."""

    def __init__(self, state: EncoderState):
        self.state = state
        self._outputs: dict[str, object] = {}

    def get(self, key: str, seq: TokenSequence):
        if key not in self._outputs:
            self._outputs[key] = forward(seq, self.state, train_mode=False)
        return self._outputs[key]


@dataclass
class FinetuneResult:
    model: FusionModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = 0.0
    optimizer: AdamState | None = None


def _model_outputs(model, ex, train_mode, rng, speech_cache, text_cache):
    speech_out = text_out = None
    if model.needs_speech:
        if speech_cache is not None:
            speech_out = speech_cache.get(ex.id, ex.speech)
        else:
            speech_out = forward(ex.speech, model.speech, train_mode=train_mode, rng=rng)
    if model.needs_text:
        if text_cache is not None:
            text_out = text_cache.get(ex.id, ex.text)
        else:
            text_out = forward(ex.text, model.text, train_mode=train_mode, rng=rng)
    return speech_out, text_out


def _example_loss(model, ex, label_mode, train_mode, rng, speech_cache, text_cache):
    speech_out, text_out = _model_outputs(model, ex, train_mode, rng, speech_cache, text_cache)
    fused = model.fuse(speech_out, text_out, train_mode=train_mode, rng=rng)
    if label_mode == "categorical":
        return classification_loss(fused.logits, int(ex.target))
    return regression_loss(fused.logits, float(ex.target))


def evaluate_model(
    model: FusionModel,
    examples: list[TokenizedExample],
    label_mode: str,
    class_names=None,
    speech_cache: _EncoderCache | None = None,
    text_cache: _EncoderCache | None = None,
):
    """Eval-mode predictions over a split, summarized as a MetricReport."""
    if not examples:
        raise InputError("cannot evaluate on an empty example list")
    preds, golds = [], []
    for ex in examples:
        speech_out, text_out = _model_outputs(model, ex, False, None, speech_cache, text_cache)
        fused = model.fuse(speech_out, text_out, train_mode=False)
        if label_mode == "categorical":
            preds.append(predict_class(fused.logits.data))
            golds.append(int(ex.target))
        else:
            preds.append(predict_score(fused.logits.data))
            golds.append(float(ex.target))
    if label_mode == "categorical":
        return evaluate_classification(preds, golds, class_names)
    return evaluate_scores(preds, golds)


def run_finetune(
    train: list[TokenizedExample],
    valid: list[TokenizedExample],
    model: FusionModel,
    cfg: TrainConfig,
    epochs: int,
    label_mode: str = "categorical",
    log_fn=None,
) -> FinetuneResult:
    """Train the fusion model; keep the parameters of the best validation epoch.

    Freeze flags drop the corresponding encoder's parameters from the
    optimizer entirely and serve its features from an eval-mode cache, so
    frozen parameters never change, bitwise. The validation metric is
    unweighted 4-class accuracy (higher wins) in categorical mode and MAE
    (lower wins) in score mode.
    """
    if not train:
        raise InputError("fine-tuning needs a non-empty training split")
    if label_mode not in ("categorical", "score"):
        raise InputError(f"unknown label mode {label_mode!r}")
    steps_per_epoch = (len(train) + cfg.batch_size - 1) // cfg.batch_size
    cfg = cfg.resolved(total_steps=max(1, epochs * steps_per_epoch))
    rng = np.random.default_rng(cfg.seed)

    speech_cache = text_cache = None
    if model.speech is not None:
        model.speech.set_requires_grad(not cfg.freeze_speech)
        if cfg.freeze_speech and model.needs_speech:
            speech_cache = _EncoderCache(model.speech)
    if model.text is not None:
        model.text.set_requires_grad(not cfg.freeze_text)
        if cfg.freeze_text and model.needs_text:
            text_cache = _EncoderCache(model.text)

    all_params = model.named_params()
    trainable = {
        name: p for name, p in all_params.items()
        if not (cfg.freeze_speech and name.startswith("speech."))
        and not (cfg.freeze_text and name.startswith("text."))
    }
    opt = AdamState.fresh(trainable)
    history: list[dict] = []
    best_metric: float | None = None
    best_epoch = 0
    best_arrays: dict[str, np.ndarray] | None = None
    step = 0

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            T.zero_grads(trainable.values())
            for ex in batch:
                loss = _example_loss(model, ex, label_mode, True, rng, speech_cache, text_cache)
                T.backward(loss)
                epoch_loss += loss.item()
            grads = _clipped(collect_gradients(trainable, len(batch)), cfg.grad_clip)
            step = min(step + 1, cfg.total_steps)
            adam_step(trainable, grads, opt, lr_at(step, cfg), cfg)
        T.zero_grads(trainable.values())
        history.append({"epoch": epoch, "split": "train", "metric": "loss",
                        "value": epoch_loss / len(train)})
        report = evaluate_model(model, valid, label_mode,
                                speech_cache=speech_cache, text_cache=text_cache) if valid else None
        if report is not None:
            if label_mode == "categorical":
                metric_name, value, better = "accuracy4", report.accuracy4, lambda a, b: a > b
            else:
                metric_name, value, better = "mae", report.mae, lambda a, b: a < b
            history.append({"epoch": epoch, "split": "valid", "metric": metric_name,
                            "value": value})
            if best_metric is None or better(value, best_metric):
                best_metric = value
                best_epoch = epoch
                best_arrays = {n: p.data.copy() for n, p in trainable.items()}
        if log_fn is not None:
            log_fn(epoch, history[-1]["value"])

    if best_arrays is not None:
        for name, arr in best_arrays.items():
            trainable[name].data = arr
    return FinetuneResult(model=model, history=history, best_epoch=best_epoch,
                          best_metric=best_metric or 0.0, optimizer=opt)
