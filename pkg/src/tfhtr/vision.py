"""Visual feature encoder: CNN, width-wise collapse, temporal encoding, self-attention."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import CnnConfig, ModelConfig
from .errors import ConfigError, DimensionError, InputError
from .nn import Conv2d, EncoderBlock, LayerNorm, Linear, Module
from .tensor import Tensor


def temporal_encoding(length: int, f: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal encoding as a (length, f) array.

    Row ``pos`` holds sin(pos / 10000**(2i/f)) in column 2i and the matching
    cosine in column 2i+1.
    """
    if f % 2:
        raise ConfigError(f"temporal encoding needs an even feature size, got {f}")
    if length < 1:
        raise ConfigError(f"temporal encoding needs length >= 1, got {length}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    denom = np.power(10000.0, np.arange(0, f, 2, dtype=np.float64) / f)
    angles = pos / denom
    out = np.empty((length, f), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out.astype(dtype)


class ResidualStage(Module):
    """conv(-norm)-ReLU-conv(-norm) with a strided 1x1 projection shortcut.

    With ``norm="channel"`` each pixel's channels are layer-normalised, which
    keeps the stage independent of batch composition and padding but also
    erases the contrast between faint and strong ink. Without it the convs
    carry biases instead.
    """

    def __init__(self, c_in, c_out, kernel, stride, convs, rng, dtype, eps, norm="none"):
        use_norm = norm == "channel"
        self.conv1 = Conv2d(c_in, c_out, kernel, stride, rng, dtype, bias=not use_norm)
        self.norm1 = LayerNorm(c_out, dtype, eps) if use_norm else None
        self.conv2 = self.norm2 = None
        if convs == 2:
            self.conv2 = Conv2d(c_out, c_out, kernel, (1, 1), rng, dtype, bias=not use_norm)
            self.norm2 = LayerNorm(c_out, dtype, eps) if use_norm else None
        self.shortcut = Conv2d(c_in, c_out, 1, stride, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(x)
        if self.norm1 is not None:
            h = self.norm1(h)
        if self.conv2 is not None:
            h = self.conv2(T.relu(h))
            if self.norm2 is not None:
                h = self.norm2(h)
        return T.relu(h + self.shortcut(x))


class CnnBackbone(Module):
    def __init__(self, cfg: CnnConfig, rng, dtype, eps: float = 1e-5):
        cfg.validate()
        self.cfg = cfg
        c_in = 1
        self.stages = []
        for c, k, sv, sh in zip(cfg.channels, cfg.kernel_sizes, cfg.strides, cfg.horizontal_strides):
            self.stages.append(ResidualStage(c_in, c, k, (sv, sh), cfg.convs_per_stage, rng, dtype, eps, cfg.norm))
            c_in = c

    @property
    def out_channels(self) -> int:
        return self.cfg.channels[-1]

    def __call__(self, x: Tensor) -> Tensor:
        """(B, 64, W, 1) ink map -> (B, h, w, f_c) feature map."""
        if x.ndim != 4 or x.shape[-1] != 1:
            raise DimensionError(f"expected (B, H, W, 1) input, got {x.shape}")
        if x.shape[1] != self.cfg.input_height:
            raise InputError(f"image height must be {self.cfg.input_height}, got {x.shape[1]}")
        if x.shape[2] == 0:
            raise InputError("zero-width image")
        for stage in self.stages:
            x = stage(x)
        return x


def visual_lengths(widths, stride: int) -> np.ndarray:
    """Feature sequence length per image: ceil(width / horizontal stride)."""
    return np.array([math.ceil(w / stride) for w in widths], dtype=np.intp)


class VisualEncoder(Module):
    """Line image -> abscissa-sensitive visual feature sequence."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.cfg = cfg
        f = cfg.feature_size
        eps = cfg.layer_norm_eps
        self.cnn = CnnBackbone(cfg.cnn, rng, dtype, eps)
        self.collapse = Linear(cfg.cnn.output_height * cfg.cnn.channels[-1], f, rng, dtype)
        self.position_proj = Linear(f, f, rng, dtype)
        self.blocks = [EncoderBlock(f, cfg.heads, cfg.ffn_multiplier * f, rng, dtype,
                                    scale=cfg.attention_scale, dropout=cfg.dropout,
                                    activation=cfg.activation, norm_position=cfg.norm_position,
                                    eps=eps)
                       for _ in range(cfg.encoder_blocks)]
        self.final_norm = LayerNorm(f, dtype, eps) if cfg.norm_position == "pre" and self.blocks else None

    def cnn_extract(self, images: Tensor) -> Tensor:
        return self.cnn(images)

    def collapse_and_project(self, fmap: Tensor) -> Tensor:
        """(B, h, w, C) -> (B, w, f); a per-column fully connected layer."""
        b, h, w, c = fmap.shape
        return self.collapse(fmap.transpose(0, 2, 1, 3).reshape(b, w, h * c))

    def add_te_and_project(self, feats: Tensor) -> Tensor:
        if self.cfg.visual_temporal_encoding:
            te = temporal_encoding(feats.shape[1], self.cfg.feature_size, feats.dtype)
            feats = feats + te
        return self.position_proj(feats)

    def self_attention(self, x: Tensor, key_mask: np.ndarray | None = None, rng=None) -> Tensor:
        """``key_mask`` is (B, w), True at padded columns."""
        mask = None if key_mask is None else key_mask[:, None, None, :]
        for block in self.blocks:
            x = block(x, mask, rng)
        if self.final_norm is not None:
            x = self.final_norm(x)
        return x

    def __call__(self, images, widths=None, rng=None) -> tuple[Tensor, np.ndarray]:
        """Encode a batch of (B, 64, W, 1) ink maps.

        ``widths`` gives each image's unpadded pixel width; columns beyond
        it are masked out of attention. Returns features (B, w, f) and the
        padding mask (B, w).
        """
        images = T.as_tensor(images)
        fmap = self.cnn_extract(images)
        w = fmap.shape[2]
        if widths is None:
            lengths = np.full(images.shape[0], w, dtype=np.intp)
        else:
            lengths = np.minimum(visual_lengths(widths, self.cfg.cnn.horizontal_stride), w)
        key_mask = np.arange(w)[None, :] >= lengths[:, None]
        x = self.add_te_and_project(self.collapse_and_project(fmap))
        return self.self_attention(x, key_mask, rng), key_mask
