"""Command-line harness: data generation, preparation, pretraining, fine-tuning,
evaluation, and the ablation grid.

Every command resolves its configuration (defaults < config file < flags),
runs, and writes a manifest next to its artifacts recording the resolved
config, seed, input digests, and output digests. Artifacts are written
atomically, so a failed run leaves no partial files. Exit codes: 0 success,
1 usage error, 2 input error, 3 numeric failure.

The output root comes from --out-dir, falling back to the EMOFUSE_OUT
environment variable and then ./runs.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import (
    load_encoder_checkpoint,
    load_fusion_checkpoint,
    save_encoder_checkpoint,
    save_fusion_checkpoint,
)
from .data import (
    CLASS_NAMES,
    Dataset,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    tokenize_examples,
)
from .encoder import EncoderConfig, EncoderState
from .errors import EmofuseError, InputError, NumericError, UsageError
from .fileio import atomic_write_text, sha256_file
from .fusion import CoAttentionBlock, FusionModel, LinearHead
from .metrics import MetricReport
from .speech import Codebook, discretize, train_codebook
from .text import Vocabulary, build_vocab
from .training import AdamState, TrainConfig, evaluate_model, run_finetune, run_pretraining

FUSION_CHOICES = ("shallow", "coattn", "speech-only", "text-only")
FREEZE_CHOICES = ("none", "speech", "text", "both")

ABLATION_CELLS = (
    ("shallow-ft", "shallow", "none"),
    ("coattn-ft", "coattn", "none"),
    ("speech-only", "speech-only", "none"),
    ("text-only", "text-only", "none"),
    ("shallow-frozen", "shallow", "both"),
    ("coattn-frozen", "coattn", "both"),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args) -> Path:
    root = args.out_dir or os.environ.get("EMOFUSE_OUT") or "runs"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Resolved run description persisted alongside every artifact."""

    def __init__(self, command: str, args: argparse.Namespace):
        config = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
        self.record = {
            "command": command,
            "config": config,
            "seed": config.get("seed"),
            "input_digests": {},
            "outputs": {},
            "started": _now(),
        }

    def add_input(self, path) -> None:
        if not path:
            return
        if not Path(path).exists():
            raise InputError(f"input file {path} does not exist")
        self.record["input_digests"][str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.record["outputs"][str(path)] = sha256_file(path)

    def write(self, out_dir: Path) -> Path:
        self.record["finished"] = _now()
        path = out_dir / f"{self.record['command']}.manifest.json"
        atomic_write_text(path, json.dumps(self.record, indent=2, sort_keys=True) + "\n")
        return path


def _parse_config_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Overlay config-file values onto args; explicit flags still win."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise InputError(f"config file {path} does not exist")
    explicit = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise InputError(f"{path}:{lineno}: unknown option {key!r}")
        if f"--{key.replace('_', '-')}" not in explicit:
            setattr(args, dest, _parse_config_value(raw))


def _speech_config(args, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(
        n_layers=args.speech_layers, d_model=args.speech_dim, n_heads=args.speech_heads,
        d_ff=args.speech_ff, vocab_size=vocab_size, max_len=args.speech_max_len,
        dropout_rate=args.dropout,
    )


def _text_config(args, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(
        n_layers=args.text_layers, d_model=args.text_dim, n_heads=args.text_heads,
        d_ff=args.text_ff, vocab_size=vocab_size, max_len=args.text_max_len,
        dropout_rate=args.dropout,
    )


def _train_config(args, **overrides) -> TrainConfig:
    base = dict(
        peak_lr=args.lr, batch_size=args.batch_size, dropout=args.dropout,
        seed=args.seed, grad_clip=args.grad_clip,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _tokenized_splits(dataset: Dataset, codebook: Codebook, vocab: Vocabulary, args):
    return {
        split: tokenize_examples(
            dataset.subset(split), codebook, vocab,
            speech_max_len=args.speech_max_len, text_max_len=args.text_max_len)
        for split in dataset.splits
    }


def _metrics_csv(rows: list[tuple]) -> str:
    lines = ["epoch,split,metric,value"]
    for epoch, split, metric, value in rows:
        lines.append(f"{epoch},{split},{metric},{value}")
    return "\n".join(lines) + "\n"


def _report_rows(report: MetricReport, epoch, split) -> list[tuple]:
    rows = []
    for scope, metric, value in report.rows():
        name = metric if scope == "all" else f"{metric}[{scope}]"
        rows.append((epoch, split, name, value))
    return rows


def _print_report(report: MetricReport, title: str) -> None:
    print(title)
    for scope, metric, value in report.rows():
        print(f"  {scope:>10} {metric:<18} {value:.4f}")


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    manifest = Manifest("gen-data", args)
    dataset = generate_synthetic(args.n, seed=args.seed, mode=args.mode)
    path = out / args.name
    save_jsonl(dataset, path)
    manifest.add_output(path)
    manifest.write(out)
    print(f"wrote {path} ({args.n} examples, mode={args.mode})")
    return 0


def cmd_prepare(args) -> int:
    out = _out_dir(args)
    manifest = Manifest("prepare", args)
    manifest.add_input(args.dataset)
    dataset = load_jsonl(args.dataset)
    split = "train" if "train" in dataset.splits else next(iter(dataset.splits))
    examples = dataset.subset(split)
    vocab = build_vocab([ex.text for ex in examples], max_size=args.vocab_size)
    frames = np.concatenate([ex.frames for ex in examples])
    codebook = train_codebook(frames, k=args.codebook_size, seed=args.seed)
    vocab_path = out / "vocab.txt"
    codebook_path = out / "codebook.bin"
    vocab.save(vocab_path)
    codebook.save(codebook_path)
    manifest.add_output(vocab_path)
    manifest.add_output(codebook_path)
    manifest.write(out)
    print(f"wrote {vocab_path} ({vocab.size} ids) and {codebook_path} (K={codebook.k})")
    return 0


def cmd_pretrain(args) -> int:
    out = _out_dir(args)
    manifest = Manifest("pretrain", args)
    manifest.add_input(args.dataset)
    manifest.add_input(args.codebook)
    dataset = load_jsonl(args.dataset)
    codebook = Codebook.load(args.codebook)
    split = "train" if "train" in dataset.splits else next(iter(dataset.splits))
    corpus = [discretize(ex.frames, codebook, max_len=args.speech_max_len)
              for ex in dataset.subset(split)]
    vocab_size = 5 + codebook.k

    start_step = 0
    opt = None
    if args.resume:
        manifest.add_input(args.resume)
        state, meta, extras = load_encoder_checkpoint(args.resume)
        if state.cfg.vocab_size != vocab_size:
            raise InputError("resume checkpoint vocabulary does not match the codebook")
        start_step = int(meta["step"])
        opt = AdamState(
            m={n: extras[f"adam.m.{n}"] for n in state.params},
            v={n: extras[f"adam.v.{n}"] for n in state.params},
            step=start_step,
        )
    else:
        cfg_enc = _speech_config(args, vocab_size)
        state = EncoderState.init(cfg_enc, np.random.default_rng(args.seed))
        if args.require_pretrained:
            raise UsageError("--require-pretrained needs --resume pointing at a checkpoint")

    cfg = _train_config(args, warmup_steps=args.warmup_steps, total_steps=args.steps)
    ckpt_path = out / "speech_encoder.ckpt"
    log_lines: list[str] = []
    if opt is None:
        opt = AdamState.fresh(state.params)
        opt.step = start_step

    def save_state() -> None:
        extras = {}
        for name in state.params:
            extras[f"adam.m.{name}"] = opt.m[name]
            extras[f"adam.v.{name}"] = opt.v[name]
        save_encoder_checkpoint(ckpt_path, state, extra_meta={"step": opt.step},
                                extra_blocks=extras)

    def log(step, lr, loss) -> None:
        log_lines.append(f"{step} {lr:.10e} {loss:.10f}")
        if args.checkpoint_interval and step % args.checkpoint_interval == 0:
            save_state()

    run_pretraining(corpus, state, cfg, mask_rate=args.mask_rate, log_fn=log,
                    opt=opt, start_step=start_step)
    save_state()
    log_path = out / "pretrain.log"
    atomic_write_text(log_path, "\n".join(log_lines) + "\n")
    manifest.add_output(ckpt_path)
    manifest.add_output(log_path)
    manifest.write(out)
    print(f"pretrained to step {opt.step}; checkpoint at {ckpt_path}")
    return 0


def _build_model(args, fusion: str, speech_cfg, text_cfg, rng) -> FusionModel:
    speech = text = block = None
    if fusion != "text-only":
        speech = EncoderState.init(speech_cfg, rng)
    if fusion != "speech-only":
        text = EncoderState.init(text_cfg, rng)
    n_outputs = 2 * len(CLASS_NAMES) if args.label_mode == "categorical" else 1
    dims = {
        "shallow": speech_cfg.d_model + text_cfg.d_model,
        "coattn": speech_cfg.d_model + text_cfg.d_model,
        "speech-only": speech_cfg.d_model,
        "text-only": text_cfg.d_model,
    }
    head = LinearHead.init(dims[fusion], n_outputs, rng)
    if fusion == "coattn":
        block = CoAttentionBlock.init(speech_cfg.d_model, text_cfg.d_model,
                                      n_heads=args.coattn_heads, rng=rng)
    return FusionModel(fusion, head, speech=speech, text=text, block=block,
                       fusion_dropout=args.dropout)


def _load_pretrained_speech(args, model: FusionModel, manifest: Manifest) -> None:
    if args.require_pretrained and not args.speech_checkpoint:
        raise UsageError("--require-pretrained needs --speech-checkpoint")
    if args.speech_checkpoint and model.needs_speech:
        if not Path(args.speech_checkpoint).exists():
            raise InputError(f"pretrained checkpoint {args.speech_checkpoint} does not exist")
        manifest.add_input(args.speech_checkpoint)
        state, _, _ = load_encoder_checkpoint(args.speech_checkpoint)
        if state.cfg.d_model != model.speech.cfg.d_model:
            raise InputError("pretrained speech encoder dims do not match requested config")
        model.speech.load_arrays(state.copy_arrays())
        model.speech.cfg = state.cfg


def _check_freeze(fusion: str, freeze: str) -> tuple[bool, bool]:
    if fusion == "speech-only" and freeze in ("text", "both"):
        raise UsageError(f"--freeze {freeze} references the text encoder, unused by {fusion}")
    if fusion == "text-only" and freeze in ("speech", "both"):
        raise UsageError(f"--freeze {freeze} references the speech encoder, unused by {fusion}")
    return freeze in ("speech", "both"), freeze in ("text", "both")


def _run_one_finetune(args, splits, fusion, freeze, seed, speech_cfg, text_cfg):
    rng = np.random.default_rng(seed)
    model = _build_model(args, fusion, speech_cfg, text_cfg, rng)
    freeze_speech, freeze_text = _check_freeze(fusion, freeze)
    cfg = _train_config(args, seed=seed, freeze_speech=freeze_speech, freeze_text=freeze_text)
    result = run_finetune(splits["train"], splits.get("valid", []), model, cfg,
                          epochs=args.epochs, label_mode=args.label_mode)
    report = evaluate_model(model, splits["test"], args.label_mode, class_names=CLASS_NAMES) \
        if "test" in splits and splits["test"] else None
    return model, result, report


def cmd_finetune(args) -> int:
    out = _out_dir(args)
    manifest = Manifest("finetune", args)
    for path in (args.dataset, args.vocab, args.codebook):
        manifest.add_input(path)
    dataset = load_jsonl(args.dataset)
    args.label_mode = dataset.label_mode
    vocab = Vocabulary.load(args.vocab)
    codebook = Codebook.load(args.codebook)
    splits = _tokenized_splits(dataset, codebook, vocab, args)
    if "train" not in splits:
        raise InputError("dataset has no train split")
    speech_cfg = _speech_config(args, 5 + codebook.k)
    text_cfg = _text_config(args, vocab.size)

    rng = np.random.default_rng(args.seed)
    model = _build_model(args, args.fusion, speech_cfg, text_cfg, rng)
    _load_pretrained_speech(args, model, manifest)
    freeze_speech, freeze_text = _check_freeze(args.fusion, args.freeze)
    cfg = _train_config(args, freeze_speech=freeze_speech, freeze_text=freeze_text,
                        warmup_steps=args.warmup_steps)
    result = run_finetune(splits["train"], splits.get("valid", []), model, cfg,
                          epochs=args.epochs, label_mode=args.label_mode)

    rows = [(h["epoch"], h["split"], h["metric"], h["value"]) for h in result.history]
    if "test" in splits and splits["test"]:
        report = evaluate_model(model, splits["test"], args.label_mode, class_names=CLASS_NAMES)
        rows += _report_rows(report, "final", "test")
        _print_report(report, f"test metrics ({args.fusion}, freeze={args.freeze})")

    model_path = out / "model.ckpt"
    save_fusion_checkpoint(model_path, model, label_mode=args.label_mode,
                           extra_meta={"best_epoch": result.best_epoch})
    metrics_path = out / "metrics.csv"
    atomic_write_text(metrics_path, _metrics_csv(rows))
    manifest.add_output(model_path)
    manifest.add_output(metrics_path)
    manifest.write(out)
    print(f"wrote {model_path} and {metrics_path}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    manifest = Manifest("evaluate", args)
    for path in (args.model, args.dataset, args.vocab, args.codebook):
        manifest.add_input(path)
    model, meta = load_fusion_checkpoint(args.model)
    dataset = load_jsonl(args.dataset)
    if dataset.label_mode != meta["label_mode"]:
        raise InputError(
            f"dataset label mode {dataset.label_mode!r} does not match model "
            f"({meta['label_mode']!r})")
    vocab = Vocabulary.load(args.vocab)
    codebook = Codebook.load(args.codebook)
    speech_max = model.speech.cfg.max_len if model.speech else 8
    text_max = model.text.cfg.max_len if model.text else 8
    examples = tokenize_examples(dataset.subset(args.split), codebook, vocab,
                                 speech_max_len=speech_max, text_max_len=text_max)
    report = evaluate_model(model, examples, meta["label_mode"], class_names=CLASS_NAMES)
    _print_report(report, f"metrics on split {args.split!r}")
    metrics_path = out / "eval_metrics.csv"
    atomic_write_text(metrics_path, _metrics_csv(_report_rows(report, "final", args.split)))
    manifest.add_output(metrics_path)
    manifest.write(out)
    return 0


def _ablation_table(mean_rows: dict[str, dict[str, float]]) -> str:
    metrics = ["acc4"] + [f"ba[{c}]" for c in CLASS_NAMES] + [f"f1[{c}]" for c in CLASS_NAMES]
    header = f"{'cell':<16}" + "".join(f"{m:>14}" for m in metrics)
    lines = [header, "-" * len(header)]
    for cell, _, _ in ABLATION_CELLS:
        vals = mean_rows[cell]
        lines.append(f"{cell:<16}" + "".join(f"{vals[m]:>14.4f}" for m in metrics))
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    manifest = Manifest("ablate", args)
    for path in (args.dataset, args.vocab, args.codebook):
        manifest.add_input(path)
    dataset = load_jsonl(args.dataset)
    if dataset.label_mode != "categorical":
        raise InputError("the ablation grid needs a categorical dataset")
    args.label_mode = dataset.label_mode
    vocab = Vocabulary.load(args.vocab)
    codebook = Codebook.load(args.codebook)
    splits = _tokenized_splits(dataset, codebook, vocab, args)
    for required in ("train", "valid", "test"):
        if required not in splits or not splits[required]:
            raise InputError(f"ablation needs a non-empty {required!r} split")
    speech_cfg = _speech_config(args, 5 + codebook.k)
    text_cfg = _text_config(args, vocab.size)

    csv_rows = []
    cell_acc: dict[str, list[float]] = {}
    mean_rows: dict[str, dict[str, float]] = {}
    for cell, fusion, freeze in ABLATION_CELLS:
        per_metric: dict[str, list[float]] = {}
        for rep in range(args.reps):
            seed = args.seed + rep
            _, _, report = _run_one_finetune(args, splits, fusion, freeze, seed,
                                             speech_cfg, text_cfg)
            values = {"acc4": report.accuracy4}
            for cls in CLASS_NAMES:
                values[f"ba[{cls}]"] = report.per_class[cls]["binary_accuracy"]
                values[f"f1[{cls}]"] = report.per_class[cls]["f1"]
            for metric, value in values.items():
                per_metric.setdefault(metric, []).append(value)
                csv_rows.append((cell, rep, seed, metric, value))
            print(f"{cell} rep={rep} seed={seed} acc4={report.accuracy4:.4f}")
        mean_rows[cell] = {m: float(np.mean(v)) for m, v in per_metric.items()}
        cell_acc[cell] = per_metric["acc4"]
    table = _ablation_table(mean_rows)
    print(table)

    observations = {
        "finetuned_ge_frozen_shallow": float(np.mean(cell_acc["shallow-ft"]))
        >= float(np.mean(cell_acc["shallow-frozen"])),
        "coattn_beats_shallow_when_frozen": float(np.mean(cell_acc["coattn-frozen"]))
        > float(np.mean(cell_acc["shallow-frozen"])),
        "bimodal_beats_unimodal": float(np.mean(cell_acc["shallow-ft"]))
        > max(float(np.mean(cell_acc["speech-only"])), float(np.mean(cell_acc["text-only"]))),
    }
    for name, value in observations.items():
        print(f"observation {name}: {value}")
    manifest.record["observations"] = observations

    csv_path = out / "ablation.csv"
    lines = ["cell,rep,seed,metric,value"]
    lines += [f"{c},{r},{s},{m},{v}" for c, r, s, m, v in csv_rows]
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    table_path = out / "ablation.txt"
    atomic_write_text(table_path, table)
    manifest.add_output(csv_path)
    manifest.add_output(table_path)
    manifest.write(out)
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", default=None,
                   help="output directory (default: $EMOFUSE_OUT or ./runs)")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--config", default=None,
                   help="key = value config file; explicit flags win")


def _add_arch(p: argparse.ArgumentParser) -> None:
    p.add_argument("--speech-layers", type=int, default=4, help="speech encoder layers")
    p.add_argument("--speech-dim", type=int, default=128, help="speech embedding dim")
    p.add_argument("--speech-heads", type=int, default=4, help="speech attention heads")
    p.add_argument("--speech-ff", type=int, default=512, help="speech feed-forward dim")
    p.add_argument("--speech-max-len", type=int, default=256, help="speech max sequence length")
    p.add_argument("--text-layers", type=int, default=4, help="text encoder layers")
    p.add_argument("--text-dim", type=int, default=160, help="text embedding dim")
    p.add_argument("--text-heads", type=int, default=4, help="text attention heads")
    p.add_argument("--text-ff", type=int, default=640, help="text feed-forward dim")
    p.add_argument("--text-max-len", type=int, default=64, help="text max sequence length")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout rate")
    p.add_argument("--grad-clip", type=float, default=None, help="global gradient-norm clip")


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-5, help="peak learning rate")
    p.add_argument("--batch-size", type=int, default=16, help="effective batch size")
    p.add_argument("--warmup-steps", type=int, default=None,
                   help="warmup updates (default: 6%% of total)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emofuse", allow_abbrev=False,
                     description=__doc__,
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic bimodal dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--n", type=int, default=200, help="number of examples")
    p.add_argument("--mode", choices=("categorical", "score"), default="categorical",
                   help="label kind")
    p.add_argument("--name", default="dataset.jsonl", help="output file name")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("prepare", help="build the vocabulary and speech codebook",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--vocab-size", type=int, default=2000, help="max vocabulary size")
    p.add_argument("--codebook-size", type=int, default=256, help="codebook entries K")
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("pretrain", help="masked-token pretraining of the speech encoder",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--codebook", required=True, help="codebook file path")
    p.add_argument("--steps", type=int, default=500, help="total update steps")
    p.add_argument("--mask-rate", type=float, default=0.15, help="masking probability")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--require-pretrained", action="store_true",
                   help="fail instead of starting fresh")
    p.add_argument("--checkpoint-interval", type=int, default=0,
                   help="write the checkpoint every N steps (0: only at the end)")
    _add_common(p)
    _add_arch(p)
    _add_train(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train a fusion model on a labeled dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--vocab", required=True, help="vocabulary file path")
    p.add_argument("--codebook", required=True, help="codebook file path")
    p.add_argument("--fusion", choices=FUSION_CHOICES, default="shallow",
                   help="fusion mechanism")
    p.add_argument("--freeze", choices=FREEZE_CHOICES, default="none",
                   help="encoders to exclude from training")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--coattn-heads", type=int, default=4, help="co-attention heads")
    p.add_argument("--speech-checkpoint", default=None,
                   help="pretrained speech encoder checkpoint")
    p.add_argument("--require-pretrained", action="store_true",
                   help="fail unless a pretrained speech checkpoint is supplied")
    _add_common(p)
    _add_arch(p)
    _add_train(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a fusion checkpoint on a dataset split",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True, help="fusion checkpoint path")
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--vocab", required=True, help="vocabulary file path")
    p.add_argument("--codebook", required=True, help="codebook file path")
    p.add_argument("--split", default="test", help="dataset split to evaluate")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the fusion/freeze ablation grid",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--vocab", required=True, help="vocabulary file path")
    p.add_argument("--codebook", required=True, help="codebook file path")
    p.add_argument("--epochs", type=int, default=10, help="training epochs per cell")
    p.add_argument("--reps", type=int, default=3, help="repetitions per cell")
    p.add_argument("--coattn-heads", type=int, default=4, help="co-attention heads")
    _add_common(p)
    _add_arch(p)
    _add_train(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except InputError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3
    except EmofuseError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
