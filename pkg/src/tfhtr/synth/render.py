"""Procedural text-line rendering from stroke templates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import VocabularyError
from . import glyphs

LINE_HEIGHT = 64


@dataclass
class LineImage:
    pixels: np.ndarray          # (H, W) uint8, 255 = background
    text: str | None = None

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class StyleSpec:
    """Ranges from which one writing style is drawn per seed (uniform)."""

    unit: tuple[float, float] = (2.9, 3.7)          # px per template cell
    thickness: tuple[float, float] = (1.4, 2.4)     # pen width, px
    slant: tuple[float, float] = (-0.25, 0.25)      # horizontal shear
    char_gap: tuple[float, float] = (0.8, 1.5)      # cells between glyphs
    space_width: tuple[float, float] = (2.5, 3.8)   # cells
    wobble: tuple[float, float] = (0.0, 2.0)        # baseline amplitude, px
    jitter: tuple[float, float] = (0.0, 0.12)       # per-point noise, cells
    darkness: tuple[float, float] = (0.75, 1.0)
    margin: tuple[int, int] = (4, 10)


CLEAN_STYLE = StyleSpec()
# A second, visibly different family used as a stand-in for "real" handwriting.
CURSIVE_STYLE = StyleSpec(unit=(3.0, 3.9), thickness=(1.8, 3.0), slant=(0.15, 0.45),
                          char_gap=(0.3, 0.9), wobble=(1.0, 3.5), jitter=(0.08, 0.22),
                          darkness=(0.6, 0.95))
STYLES = {"clean": CLEAN_STYLE, "cursive": CURSIVE_STYLE}


def _u(rng, bounds):
    return float(rng.uniform(bounds[0], bounds[1]))


def _segment_ink(px: np.ndarray, py: np.ndarray, segs: np.ndarray, radius: float) -> np.ndarray:
    """Anti-aliased coverage of pixel centres (px, py) by thick segments."""
    a = segs[:, 0, :]
    b = segs[:, 1, :]
    d = b - a
    len2 = (d * d).sum(axis=1)
    len2 = np.where(len2 == 0, 1.0, len2)
    qx = px.reshape(-1, 1)
    qy = py.reshape(-1, 1)
    t = ((qx - a[:, 0]) * d[:, 0] + (qy - a[:, 1]) * d[:, 1]) / len2
    t = np.clip(t, 0.0, 1.0)
    cx = a[:, 0] + t * d[:, 0] - qx
    cy = a[:, 1] + t * d[:, 1] - qy
    dist = np.sqrt(cx * cx + cy * cy).min(axis=1)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0).reshape(px.shape)


def render_line(text: str, style_seed: int, style: StyleSpec = CLEAN_STYLE) -> LineImage:
    """Render ``text`` as a 64-pixel-high grayscale line.

    Deterministic in (text, style_seed, style). Glyphs are laid out left to
    right; the per-seed style fixes size, pen width, slant, spacing and
    baseline wobble, and each glyph gets its own small jitter.
    """
    for k, ch in enumerate(text):
        if ch not in glyphs.RENDERABLE:
            raise VocabularyError(f"cannot render character {ch!r} at index {k}")
    rng = np.random.default_rng(style_seed)
    unit = _u(rng, style.unit)
    radius = _u(rng, style.thickness) / 2
    slant = _u(rng, style.slant)
    gap = _u(rng, style.char_gap)
    space = _u(rng, style.space_width)
    wobble_amp = _u(rng, style.wobble)
    wobble_freq = float(rng.uniform(0.005, 0.03))
    wobble_phase = float(rng.uniform(0, 2 * np.pi))
    jitter = _u(rng, style.jitter)
    darkness = _u(rng, style.darkness)
    margin_l = int(rng.integers(style.margin[0], style.margin[1] + 1))
    margin_r = int(rng.integers(style.margin[0], style.margin[1] + 1))
    glyph_h = glyphs.GLYPH_ROWS * unit
    top = (LINE_HEIGHT - glyph_h) / 2 + float(rng.normal(0, 1.5))
    baseline = top + glyph_h

    placed = []
    x = float(margin_l) + abs(slant) * glyph_h
    for ch in text:
        lo, hi = glyphs.ink_columns(ch)
        if hi < lo:
            x += space * unit
            continue
        segs = glyphs.strokes(ch).copy()
        segs[..., 0] += 0.5 - lo
        segs[..., 1] += 0.5
        scale = float(rng.uniform(0.92, 1.08))
        segs *= unit * scale
        segs += rng.normal(0, jitter * unit, size=segs.shape)
        segs[..., 0] += x
        segs[..., 1] += top + (1 - scale) * glyph_h
        segs[..., 0] += slant * (baseline - segs[..., 1])
        segs[..., 1] += wobble_amp * np.sin(wobble_freq * segs[..., 0] + wobble_phase)
        placed.append(segs)
        x += (hi - lo + 1) * unit * scale + gap * unit
    width = int(np.ceil(x + margin_r + abs(slant) * glyph_h))
    ink = np.zeros((LINE_HEIGHT, max(width, margin_l + margin_r)), dtype=np.float64)
    pad = radius + 1.5
    for segs in placed:
        x0 = max(int(np.floor(segs[..., 0].min() - pad)), 0)
        x1 = min(int(np.ceil(segs[..., 0].max() + pad)), ink.shape[1])
        y0 = max(int(np.floor(segs[..., 1].min() - pad)), 0)
        y1 = min(int(np.ceil(segs[..., 1].max() + pad)), LINE_HEIGHT)
        if x1 <= x0 or y1 <= y0:
            continue
        py, px = np.mgrid[y0:y1, x0:x1].astype(np.float64) + 0.5
        cover = _segment_ink(px, py, segs, radius) * darkness
        np.maximum(ink[y0:y1, x0:x1], cover, out=ink[y0:y1, x0:x1])
    pixels = np.round(255.0 * (1.0 - ink)).astype(np.uint8)
    return LineImage(pixels, text)
