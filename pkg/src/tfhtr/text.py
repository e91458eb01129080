"""Character alphabet, target encoding and the attention-based text transcriber."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ContractError, LengthError, ParseError, VocabularyError
from .nn import DecoderBlock, Embedding, LayerNorm, Linear, Module
from .tensor import Tensor
from .vision import temporal_encoding

START, END, PAD = "<S>", "<E>", "<P>"


class Alphabet:
    """Dense index map: the three specials first, then content characters."""

    def __init__(self, chars: str, specials: tuple[str, str, str] = (START, END, PAD)):
        if len(set(chars)) != len(chars):
            raise VocabularyError("alphabet characters must be distinct")
        self.specials = tuple(specials)
        self.chars = chars
        self.symbols = list(self.specials) + list(chars)
        self._index = {c: i + len(self.specials) for i, c in enumerate(chars)}
        self.start, self.end, self.pad = 0, 1, 2

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __repr__(self) -> str:
        return f"Alphabet({self.chars!r})"

    def index(self, ch: str) -> int:
        return self._index[ch]

    def encode_chars(self, text: str) -> list[int]:
        ids = []
        offset = 0
        for ch in text:
            if ch not in self._index:
                raise VocabularyError(f"character {ch!r} at byte offset {offset} is not in the alphabet")
            ids.append(self._index[ch])
            offset += len(ch.encode("utf-8"))
        return ids

    def decode(self, ids) -> str:
        """Content characters of ``ids`` up to the first end symbol."""
        out = []
        for i in ids:
            i = int(i)
            if i == self.end:
                break
            if i >= len(self.specials):
                out.append(self.symbols[i])
        return "".join(out)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for s in self.specials:
                fh.write(s + "\n")
            for ch in self.chars:
                fh.write(ch + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Alphabet":
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 3:
            raise ParseError(f"{path}: alphabet needs a 3-line header of special symbols")
        chars = lines[3:]
        for n, ch in enumerate(chars, start=4):
            if len(ch) != 1:
                raise ParseError(f"{path}:{n}: expected exactly one character, got {ch!r}")
        return cls("".join(chars), tuple(lines[:3]))


@dataclass
class TokenSequence:
    indices: np.ndarray
    content_length: int


def encode_transcription(text: str, alphabet: Alphabet, max_length: int) -> TokenSequence:
    """``<S> text <E>`` right-padded with ``<P>`` to exactly ``max_length``."""
    if len(text) > max_length - 2:
        raise LengthError(f"text of length {len(text)} exceeds the limit {max_length - 2}")
    ids = [alphabet.start] + alphabet.encode_chars(text) + [alphabet.end]
    ids += [alphabet.pad] * (max_length - len(ids))
    return TokenSequence(np.array(ids, dtype=np.intp), len(text))


def decode_transcription(seq: TokenSequence | np.ndarray, alphabet: Alphabet) -> str:
    ids = seq.indices if isinstance(seq, TokenSequence) else seq
    ids = list(ids)
    if ids and ids[0] == alphabet.start:
        ids = ids[1:]
    return alphabet.decode(ids)


def causal_mask(n: int) -> np.ndarray:
    """Boolean (n, n) matrix, True where attention is *allowed* (k <= j)."""
    return np.tril(np.ones((n, n), dtype=bool))


def smooth_targets(one_hot: np.ndarray, eps: float) -> np.ndarray:
    """Label smoothing of one-hot columns of a (|A|, N) matrix.

    Zeros become eps/|A|; ones become 1 - eps*(|A|-1)/|A|.
    """
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if not 0.0 <= eps < 1.0:
        raise ContractError(f"smoothing eps must lie in [0, 1), got {eps}")
    binary = np.isin(one_hot, (0.0, 1.0)).all(axis=0)
    if not (binary & (one_hot.sum(axis=0) == 1.0)).all():
        raise ContractError("every column must be a one-hot vector")
    n = one_hot.shape[0]
    return np.where(one_hot == 1.0, 1.0 - (n - 1) / n * eps, eps / n)


def transcription_loss(logits: Tensor, targets: np.ndarray, eps: float, pad: int) -> Tensor:
    """Mean smoothed cross-entropy over non-padding target positions.

    ``logits`` (B, L, |A|) at position j predict ``targets[:, j]``, the
    token after input position j.
    """
    targets = np.asarray(targets)
    weights = (targets != pad).astype(logits.dtype)
    return T.smoothed_cross_entropy(logits, targets, eps, weights)


class TextTranscriber(Module):
    """Embedding + temporal encoding, masked self-attention, mutual attention, output head."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.cfg = cfg
        f = cfg.feature_size
        n_sym = len(cfg.alphabet) + 3
        common = dict(scale=cfg.attention_scale, dropout=cfg.dropout, activation=cfg.activation,
                      norm_position=cfg.norm_position, eps=cfg.layer_norm_eps)
        hidden = cfg.ffn_multiplier * f
        self.embed = Embedding(n_sym, f, rng, dtype)
        if cfg.cross_attention == "per_block":
            self.blocks = [DecoderBlock(f, cfg.heads, hidden, rng, dtype, **common)
                           for _ in range(cfg.decoder_blocks)]
        else:
            self.blocks = [DecoderBlock(f, cfg.heads, hidden, rng, dtype, cross_attention=False, **common)
                           for _ in range(cfg.decoder_blocks)]
            self.blocks.append(DecoderBlock(f, cfg.heads, hidden, rng, dtype, self_attention=False, **common))
        self.final_norm = LayerNorm(f, dtype, cfg.layer_norm_eps) if cfg.norm_position == "pre" else None
        self.head = Linear(f, n_sym, rng, dtype)

    def embed_targets(self, ids: np.ndarray, offset: int = 0) -> Tensor:
        """(B, L) token ids -> (B, L, f); position j gets TE row ``offset + j``."""
        x = self.embed(ids)
        if self.cfg.text_temporal_encoding:
            te = temporal_encoding(offset + ids.shape[1], self.cfg.feature_size, x.dtype)[offset:]
            x = x + te
        return x

    def memory_kv(self, memory: Tensor) -> list:
        return [None if b.cross_attn is None else b.cross_attn.project_kv(memory) for b in self.blocks]

    def __call__(self, ids: np.ndarray, memory: Tensor, memory_mask: np.ndarray | None = None,
                 rng=None) -> Tensor:
        """Teacher-forced logits (B, L, |A|) for input tokens ``ids`` (B, L)."""
        ids = np.asarray(ids, dtype=np.intp)
        x = self.embed_targets(ids)
        blocked = ~causal_mask(ids.shape[1])
        mmask = None if memory_mask is None else memory_mask[:, None, None, :]
        for block, kv in zip(self.blocks, self.memory_kv(memory)):
            x = block(x, kv, blocked, mmask, rng)
        if self.final_norm is not None:
            x = self.final_norm(x)
        return self.head(x)

    def cross_attention_maps(self) -> list[np.ndarray]:
        """Cross-attention weights (B, H, L, w) recorded by the last call, per layer."""
        return [b.last_cross_attention.data for b in self.blocks if b.cross_attn is not None]

    def output_probabilities(self, hidden: Tensor) -> Tensor:
        return T.softmax(self.head(hidden), axis=-1)


class IncrementalState:
    """Cached decoder state for one-token-at-a-time inference."""

    def __init__(self, transcriber: TextTranscriber, memory: Tensor, memory_mask: np.ndarray | None):
        self.t = transcriber
        self.kv = transcriber.memory_kv(memory)
        self.mmask = None if memory_mask is None else memory_mask[:, None, None, :]
        self.caches = [{} for _ in transcriber.blocks]
        self.position = 0

    def step(self, ids: np.ndarray) -> Tensor:
        """Feed one token per sequence (B,) and return logits (B, |A|) for the next."""
        x = self.t.embed_targets(np.asarray(ids, dtype=np.intp)[:, None], self.position)
        for block, kv, cache in zip(self.t.blocks, self.kv, self.caches):
            x = block.step(x, cache, kv, self.mmask)
        if self.t.final_norm is not None:
            x = self.t.final_norm(x)
        self.position += 1
        return self.t.head(x)[:, 0, :]
