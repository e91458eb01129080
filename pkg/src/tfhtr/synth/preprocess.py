"""Height normalisation and right padding of line images."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import InputError, LengthError
from .render import LineImage

TARGET_HEIGHT = 64
BACKGROUND = 255
PAPER_PAD_WIDTH = 2227


class ImageTooWideError(LengthError):
    def __init__(self, scaled_width: int, pad_width: int):
        super().__init__(f"scaled width {scaled_width} exceeds pad width {pad_width}")
        self.scaled_width = scaled_width
        self.pad_width = pad_width


def resize(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling by pixel-centre mapping (pre-blurred when shrinking)."""
    h, w = pixels.shape
    if (h, w) == (height, width):
        return pixels.copy()
    src = pixels.astype(np.float64)
    fy, fx = h / height, w / width
    if fy > 1.5 or fx > 1.5:
        src = ndimage.gaussian_filter(src, (max(fy - 1, 0) / 2, max(fx - 1, 0) / 2), mode="nearest")
    rows = (np.arange(height) + 0.5) * fy - 0.5
    cols = (np.arange(width) + 0.5) * fx - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(src, [rr, cc], order=1, mode="nearest")
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def scaled_width(height: int, width: int, target_height: int = TARGET_HEIGHT) -> int:
    return max(1, int(round(width * target_height / height)))


def preprocess(img: LineImage | np.ndarray, pad_width: int | None = None,
               target_height: int = TARGET_HEIGHT) -> LineImage:
    """Resize to ``target_height`` keeping aspect, then pad right with white.

    ``pad_width=None`` skips padding. Idempotent.
    """
    if isinstance(img, np.ndarray):
        img = LineImage(img)
    pixels = np.asarray(img.pixels)
    if pixels.ndim != 2 or pixels.size == 0:
        raise InputError(f"expected a nonempty 2-D grayscale image, got shape {pixels.shape}")
    h, w = pixels.shape
    new_w = w if h == target_height else scaled_width(h, w, target_height)
    out = resize(pixels, target_height, new_w)
    if pad_width is not None:
        if new_w > pad_width:
            raise ImageTooWideError(new_w, pad_width)
        if new_w < pad_width:
            out = np.pad(out, ((0, 0), (0, pad_width - new_w)), constant_values=BACKGROUND)
    return LineImage(out, img.text)
