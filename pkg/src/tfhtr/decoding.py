"""Autoregressive greedy inference, shallow fusion and attention maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import VocabularyError
from .lm import CharNGramLM
from .model import HTRModel
from .tensor import no_grad
from .text import IncrementalState


@dataclass
class AttentionMap:
    """Cross-attention over visual columns, one row per decode step.

    ``weights`` is the mean over layers and heads; ``per_layer_head`` keeps
    the raw (layers, heads, steps, w) stack when available.
    """

    weights: np.ndarray
    provenance: str = "averaged"
    per_layer_head: np.ndarray | None = None


@dataclass
class DecodeResult:
    text: str
    token_ids: list[int]
    per_step_probs: np.ndarray
    attention: AttentionMap
    stop_reason: str
    symbols: list[str] = field(default_factory=list)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _cross_attention(model: HTRModel, position: int) -> np.ndarray:
    """Stack of (layers, B, H, w) cross-attention rows at ``position``."""
    maps = model.transcriber.cross_attention_maps()
    return np.stack([m[:, :, position, :] for m in maps])


def decode_batch(model: HTRModel, images: Sequence[np.ndarray], *, lm: CharNGramLM | None = None,
                 lm_weight: float | None = None, use_cache: bool = True,
                 max_steps: int | None = None) -> list[DecodeResult]:
    """Greedy decoding of preprocessed 64-pixel-high images.

    Each step picks ``argmax(log p_model + lm_weight * log p_lm)``; ties go
    to the lowest alphabet index. Visual features are computed once.
    ``use_cache=False`` re-runs the full masked decoder on the prefix at
    every step instead of extending cached keys/values.
    """
    alphabet = model.alphabet
    if lm is not None:
        if lm.alphabet_ != alphabet:
            raise VocabularyError("language model alphabet differs from the model alphabet")
        if lm_weight is None:
            lm_weight = lm.weight
    steps = model.cfg.max_length - 1 if max_steps is None else max_steps
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            batch = model.batch(images)
            memory, mask = model.encode(batch)
            lengths = (~mask).sum(axis=1)
            n = len(images)
            history = np.full((n, 1), alphabet.start, dtype=np.intp)
            state = IncrementalState(model.transcriber, memory, mask) if use_cache else None
            done = np.zeros(n, dtype=bool)
            records: list[list] = [[] for _ in range(n)]
            for t in range(steps):
                if state is not None:
                    logits = state.step(history[:, -1]).data
                    attn = _cross_attention(model, 0)
                else:
                    logits = model.transcriber(history, memory, mask).data[:, -1, :]
                    attn = _cross_attention(model, t)
                logp = _log_softmax(logits.astype(np.float64))
                score = logp
                if lm is not None:
                    lm_lp = np.stack([lm.log_probs(h) for h in history])
                    score = logp + lm_weight * lm_lp
                nxt = np.argmax(score, axis=-1)
                for b in range(n):
                    if not done[b]:
                        records[b].append((int(nxt[b]), np.exp(logp[b]), attn[:, b]))
                done |= nxt == alphabet.end
                history = np.concatenate([history, nxt[:, None]], axis=1)
                if done.all():
                    break
    finally:
        model.train(was_training)
    results = []
    for b in range(n):
        ids = [r[0] for r in records[b]]
        stack = np.stack([r[2][..., : lengths[b]] for r in records[b]], axis=2)
        results.append(DecodeResult(
            text=alphabet.decode(ids),
            token_ids=ids,
            per_step_probs=np.stack([r[1] for r in records[b]]),
            attention=AttentionMap(stack.mean(axis=(0, 1)), "averaged", stack),
            stop_reason="end_symbol" if ids and ids[-1] == alphabet.end else "max_length",
            symbols=[alphabet.symbols[i] for i in ids],
        ))
    return results


def greedy_decode(model: HTRModel, image: np.ndarray, use_cache: bool = True) -> DecodeResult:
    return decode_batch(model, [image], use_cache=use_cache)[0]


def decode_with_fusion(model: HTRModel, image: np.ndarray, lm: CharNGramLM,
                       weight: float | None = None) -> DecodeResult:
    return decode_batch(model, [image], lm=lm, lm_weight=weight)[0]


def predict_texts(model: HTRModel, images: Sequence[np.ndarray], batch_size: int = 32,
                  lm: CharNGramLM | None = None, lm_weight: float | None = None) -> list[str]:
    """Decode many images, batching neighbours of similar width together."""
    order = np.argsort([np.asarray(im).shape[1] for im in images], kind="stable")
    out: list[str] = [""] * len(images)
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        res = decode_batch(model, [images[i] for i in idx], lm=lm, lm_weight=lm_weight)
        for i, r in zip(idx, res):
            out[i] = r.text
    return out


def extract_attention(model: HTRModel, image: np.ndarray, text: str) -> AttentionMap:
    """Teacher-forced cross-attention for ``text``: one row per predicted symbol.

    Rows cover every character of ``text`` followed by the end symbol.
    """
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            batch = model.batch([image], [text])
            memory, mask = model.encode(batch)
            model.transcriber(batch.inputs, memory, mask)
            length = int((~mask).sum())
            maps = np.stack([m[0, :, : len(text) + 1, :length] for m in model.transcriber.cross_attention_maps()])
    finally:
        model.train(was_training)
    return AttentionMap(maps.mean(axis=(0, 1)), "averaged", maps)


def attention_heatmap(attention: AttentionMap, image_width: int, stride: int, row_height: int = 1) -> np.ndarray:
    """8-bit heatmap: one band per decode step, columns stretched to pixel width."""
    w = attention.weights
    cols = np.repeat(w, stride, axis=1)[:, :image_width]
    if cols.shape[1] < image_width:
        cols = np.pad(cols, ((0, 0), (0, image_width - cols.shape[1])))
    peak = cols.max(axis=1, keepdims=True)
    peak[peak == 0] = 1.0
    img = np.round(255.0 * cols / peak).astype(np.uint8)
    return np.repeat(img, row_height, axis=0)


def format_attention_sidecar(attention: AttentionMap, symbols: Sequence[str]) -> str:
    """Tab-separated rows: symbol, then one weight per visual column (9 significant digits)."""
    lines = []
    for sym, row in zip(symbols, attention.weights):
        lines.append("\t".join([sym] + [f"{v:.9g}" for v in row]))
    return "\n".join(lines) + "\n"


def write_attention(prefix: str | Path, attention: AttentionMap, symbols: Sequence[str],
                    image_width: int, stride: int, row_height: int = 1) -> tuple[Path, Path]:
    from .synth.imageio import write_pgm

    prefix = Path(prefix)
    heat = prefix.with_suffix(".attn.pgm")
    side = prefix.with_suffix(".attn.tsv")
    write_pgm(heat, attention_heatmap(attention, image_width, stride, row_height))
    side.write_text(format_attention_sidecar(attention, symbols), encoding="utf-8")
    return heat, side
