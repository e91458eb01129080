"""The end-to-end recogniser: visual encoder + text transcriber."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import InputError
from .nn import Module
from .tensor import Tensor, dtype_for_precision
from .text import Alphabet, TextTranscriber, encode_transcription, transcription_loss
from .vision import VisualEncoder


@dataclass
class Batch:
    images: np.ndarray      # (B, 64, W, 1) ink in [0, 1], zero-padded
    widths: np.ndarray      # unpadded pixel widths
    inputs: np.ndarray | None = None   # (B, L) decoder input ids
    targets: np.ndarray | None = None  # (B, L) next-token ids


def ink_map(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """8-bit grayscale (white background) -> ink intensity in [0, 1]."""
    return (1.0 - np.asarray(image, dtype=np.float64) / 255.0).astype(dtype)


def make_batch(images, texts=None, *, alphabet: Alphabet | None = None, max_length: int | None = None,
               stride: int = 1, pad_width: int | None = None, dtype=np.float32) -> Batch:
    """Stack preprocessed images (and optional transcriptions) into arrays.

    Images are padded on the right to the batch maximum width rounded up to
    a multiple of ``stride`` (or to ``pad_width`` when given). Token rows
    are trimmed to the longest sequence in the batch; trailing columns would
    be padding only, which the causal decoder cannot see from earlier
    positions.
    """
    if not len(images):
        raise InputError("empty batch")
    heights = {np.asarray(im).shape[0] for im in images}
    if len(heights) != 1:
        raise InputError(f"images in a batch must share one height, got {sorted(heights)}")
    widths = np.array([np.asarray(im).shape[1] for im in images], dtype=np.intp)
    if (widths == 0).any():
        raise InputError("zero-width image in batch")
    target = int(math.ceil(widths.max() / stride) * stride)
    if pad_width is not None:
        target = max(target, int(math.ceil(pad_width / stride) * stride))
    h = heights.pop()
    arr = np.zeros((len(images), h, target, 1), dtype=dtype)
    for i, im in enumerate(images):
        arr[i, :, : widths[i], 0] = ink_map(im, dtype)
    batch = Batch(arr, widths)
    if texts is not None:
        seqs = [encode_transcription(t, alphabet, max_length).indices for t in texts]
        length = max(len(t) for t in texts) + 2
        ids = np.stack(seqs)[:, :length]
        batch.inputs = ids[:, :-1]
        batch.targets = ids[:, 1:]
    return batch


class HTRModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = dtype_for_precision(cfg.precision)
        self.alphabet = Alphabet(cfg.alphabet)
        self.encoder = VisualEncoder(cfg, rng, self.dtype)
        self.transcriber = TextTranscriber(cfg, rng, self.dtype)

    @property
    def stride(self) -> int:
        return self.cfg.cnn.horizontal_stride

    def batch(self, images, texts=None, pad_width=None) -> Batch:
        return make_batch(images, texts, alphabet=self.alphabet, max_length=self.cfg.max_length,
                          stride=self.stride, pad_width=pad_width, dtype=self.dtype)

    def encode(self, batch: Batch, rng=None) -> tuple[Tensor, np.ndarray]:
        return self.encoder(batch.images, batch.widths, rng)

    def __call__(self, batch: Batch, rng=None) -> Tensor:
        memory, mask = self.encode(batch, rng)
        return self.transcriber(batch.inputs, memory, mask, rng)

    def loss(self, batch: Batch, eps: float, rng=None) -> Tensor:
        return transcription_loss(self(batch, rng), batch.targets, eps, self.alphabet.pad)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())
