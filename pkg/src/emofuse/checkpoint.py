"""Checkpoint files: a JSON header plus named float64 parameter blocks.

Layout, byte-exact so save -> load is the identity:

    bytes 0..7    magic "EMFCKPT1"
    bytes 8..11   u32 little-endian header length H
    bytes 12..    H bytes of UTF-8 JSON: {"meta": {...},
                   "blocks": [{"name": str, "shape": [int, ...]}, ...]}
    then          for each block, in listed order, C-order float64
                  little-endian data

The same container stores encoder states, fusion models, and optimizer
moments; meta carries the configs needed to rebuild them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderState
from .errors import InputError
from .fileio import atomic_write_bytes
from .fusion import CoAttentionBlock, FusionModel, LinearHead
from . import tensor as T

MAGIC = b"EMFCKPT1"


def save_checkpoint(path: str | Path, meta: dict, blocks: dict[str, np.ndarray]) -> None:
    entries = [{"name": name, "shape": list(arr.shape)} for name, arr in blocks.items()]
    header = json.dumps({"meta": meta, "blocks": entries}, sort_keys=True).encode("utf-8")
    payload = bytearray(MAGIC)
    payload += struct.pack("<I", len(header))
    payload += header
    for arr in blocks.values():
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")
    atomic_write_bytes(path, bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    blocks: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in header["blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise InputError(f"{path}: truncated checkpoint at block {entry['name']!r}")
        blocks[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise InputError(f"{path}: {len(raw) - offset} trailing bytes after last block")
    return header["meta"], blocks


def encoder_blocks(state: EncoderState, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + name: p.data for name, p in state.params.items()}


def encoder_from_blocks(cfg: EncoderConfig, blocks: dict[str, np.ndarray],
                        prefix: str = "") -> EncoderState:
    state = EncoderState.zeros(cfg)
    state.load_arrays({name: blocks[prefix + name] for name in state.params
                       if prefix + name in blocks})
    return state


def save_encoder_checkpoint(
    path: str | Path,
    state: EncoderState,
    extra_meta: dict | None = None,
    extra_blocks: dict[str, np.ndarray] | None = None,
) -> None:
    meta = {"kind": "encoder", "config": asdict(state.cfg)}
    if extra_meta:
        meta.update(extra_meta)
    blocks = encoder_blocks(state)
    if extra_blocks:
        blocks.update(extra_blocks)
    save_checkpoint(path, meta, blocks)


def load_encoder_checkpoint(path: str | Path) -> tuple[EncoderState, dict, dict[str, np.ndarray]]:
    meta, blocks = load_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise InputError(f"{path}: not an encoder checkpoint")
    cfg = EncoderConfig(**meta["config"])
    state = encoder_from_blocks(cfg, blocks)
    extras = {n: a for n, a in blocks.items() if n not in state.params}
    return state, meta, extras


def save_fusion_checkpoint(path: str | Path, model: FusionModel, label_mode: str,
                           extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "fusion",
        "fusion": model.kind,
        "label_mode": label_mode,
        "n_outputs": model.head.n_outputs,
        "head_in_dim": model.head.in_dim,
        "fusion_dropout": model.fusion_dropout,
        "speech_config": asdict(model.speech.cfg) if model.speech else None,
        "text_config": asdict(model.text.cfg) if model.text else None,
        "coattn": (
            {"d_speech": model.block.d_speech, "d_text": model.block.d_text,
             "n_heads": model.block.n_heads}
            if model.block else None
        ),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, meta, {name: p.data for name, p in model.named_params().items()})


def load_fusion_checkpoint(path: str | Path) -> tuple[FusionModel, dict]:
    meta, blocks = load_checkpoint(path)
    if meta.get("kind") != "fusion":
        raise InputError(f"{path}: not a fusion checkpoint")

    def need(name: str) -> np.ndarray:
        if name not in blocks:
            raise InputError(f"{path}: missing parameter block {name!r}")
        return blocks[name]

    speech = text = block = None
    if meta["speech_config"]:
        speech = encoder_from_blocks(EncoderConfig(**meta["speech_config"]), blocks, "speech.")
    if meta["text_config"]:
        text = encoder_from_blocks(EncoderConfig(**meta["text_config"]), blocks, "text.")
    if meta["coattn"]:
        dims = meta["coattn"]
        block = CoAttentionBlock.zeros(dims["d_speech"], dims["d_text"], dims["n_heads"])
        for name in block.params:
            block.params[name] = T.Tensor(need(f"fusion.block.{name}").copy(), requires_grad=True)
    head = LinearHead(
        T.Tensor(need("fusion.head.w").copy(), requires_grad=True),
        T.Tensor(need("fusion.head.b").copy(), requires_grad=True),
    )
    model = FusionModel(meta["fusion"], head, speech=speech, text=text, block=block,
                        fusion_dropout=meta.get("fusion_dropout", 0.0))
    return model, meta
