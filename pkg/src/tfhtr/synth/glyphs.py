"""Stroke templates for printable ASCII.

Templates come from a 5x7 dot-matrix table (one byte per column, bit 0 at
the top). Neighbouring lit cells are joined into pen strokes, so each glyph
becomes a small set of line segments that the renderer can slant, jitter
and thicken per writing style.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# columns for chr(32) .. chr(126)
_FONT_5X7 = [
    (0x00, 0x00, 0x00, 0x00, 0x00), (0x00, 0x00, 0x5F, 0x00, 0x00), (0x00, 0x07, 0x00, 0x07, 0x00),
    (0x14, 0x7F, 0x14, 0x7F, 0x14), (0x24, 0x2A, 0x7F, 0x2A, 0x12), (0x23, 0x13, 0x08, 0x64, 0x62),
    (0x36, 0x49, 0x55, 0x22, 0x50), (0x00, 0x05, 0x03, 0x00, 0x00), (0x00, 0x1C, 0x22, 0x41, 0x00),
    (0x00, 0x41, 0x22, 0x1C, 0x00), (0x08, 0x2A, 0x1C, 0x2A, 0x08), (0x08, 0x08, 0x3E, 0x08, 0x08),
    (0x00, 0x50, 0x30, 0x00, 0x00), (0x08, 0x08, 0x08, 0x08, 0x08), (0x00, 0x60, 0x60, 0x00, 0x00),
    (0x20, 0x10, 0x08, 0x04, 0x02), (0x3E, 0x51, 0x49, 0x45, 0x3E), (0x00, 0x42, 0x7F, 0x40, 0x00),
    (0x42, 0x61, 0x51, 0x49, 0x46), (0x21, 0x41, 0x45, 0x4B, 0x31), (0x18, 0x14, 0x12, 0x7F, 0x10),
    (0x27, 0x45, 0x45, 0x45, 0x39), (0x3C, 0x4A, 0x49, 0x49, 0x30), (0x01, 0x71, 0x09, 0x05, 0x03),
    (0x36, 0x49, 0x49, 0x49, 0x36), (0x06, 0x49, 0x49, 0x29, 0x1E), (0x00, 0x36, 0x36, 0x00, 0x00),
    (0x00, 0x56, 0x36, 0x00, 0x00), (0x00, 0x08, 0x14, 0x22, 0x41), (0x14, 0x14, 0x14, 0x14, 0x14),
    (0x41, 0x22, 0x14, 0x08, 0x00), (0x02, 0x01, 0x51, 0x09, 0x06), (0x32, 0x49, 0x79, 0x41, 0x3E),
    (0x7E, 0x11, 0x11, 0x11, 0x7E), (0x7F, 0x49, 0x49, 0x49, 0x36), (0x3E, 0x41, 0x41, 0x41, 0x22),
    (0x7F, 0x41, 0x41, 0x22, 0x1C), (0x7F, 0x49, 0x49, 0x49, 0x41), (0x7F, 0x09, 0x09, 0x01, 0x01),
    (0x3E, 0x41, 0x41, 0x51, 0x32), (0x7F, 0x08, 0x08, 0x08, 0x7F), (0x00, 0x41, 0x7F, 0x41, 0x00),
    (0x20, 0x40, 0x41, 0x3F, 0x01), (0x7F, 0x08, 0x14, 0x22, 0x41), (0x7F, 0x40, 0x40, 0x40, 0x40),
    (0x7F, 0x02, 0x04, 0x02, 0x7F), (0x7F, 0x04, 0x08, 0x10, 0x7F), (0x3E, 0x41, 0x41, 0x41, 0x3E),
    (0x7F, 0x09, 0x09, 0x09, 0x06), (0x3E, 0x41, 0x51, 0x21, 0x5E), (0x7F, 0x09, 0x19, 0x29, 0x46),
    (0x46, 0x49, 0x49, 0x49, 0x31), (0x01, 0x01, 0x7F, 0x01, 0x01), (0x3F, 0x40, 0x40, 0x40, 0x3F),
    (0x1F, 0x20, 0x40, 0x20, 0x1F), (0x7F, 0x20, 0x18, 0x20, 0x7F), (0x63, 0x14, 0x08, 0x14, 0x63),
    (0x03, 0x04, 0x78, 0x04, 0x03), (0x61, 0x51, 0x49, 0x45, 0x43), (0x00, 0x00, 0x7F, 0x41, 0x41),
    (0x02, 0x04, 0x08, 0x10, 0x20), (0x41, 0x41, 0x7F, 0x00, 0x00), (0x04, 0x02, 0x01, 0x02, 0x04),
    (0x40, 0x40, 0x40, 0x40, 0x40), (0x00, 0x01, 0x02, 0x04, 0x00), (0x20, 0x54, 0x54, 0x54, 0x78),
    (0x7F, 0x48, 0x44, 0x44, 0x38), (0x38, 0x44, 0x44, 0x44, 0x20), (0x38, 0x44, 0x44, 0x48, 0x7F),
    (0x38, 0x54, 0x54, 0x54, 0x18), (0x08, 0x7E, 0x09, 0x01, 0x02), (0x08, 0x14, 0x54, 0x54, 0x3C),
    (0x7F, 0x08, 0x04, 0x04, 0x78), (0x00, 0x44, 0x7D, 0x40, 0x00), (0x20, 0x40, 0x44, 0x3D, 0x00),
    (0x00, 0x7F, 0x10, 0x28, 0x44), (0x00, 0x41, 0x7F, 0x40, 0x00), (0x7C, 0x04, 0x18, 0x04, 0x78),
    (0x7C, 0x08, 0x04, 0x04, 0x78), (0x38, 0x44, 0x44, 0x44, 0x38), (0x7C, 0x14, 0x14, 0x14, 0x08),
    (0x08, 0x14, 0x14, 0x18, 0x7C), (0x7C, 0x08, 0x04, 0x04, 0x08), (0x48, 0x54, 0x54, 0x54, 0x20),
    (0x04, 0x3F, 0x44, 0x40, 0x20), (0x3C, 0x40, 0x40, 0x20, 0x7C), (0x1C, 0x20, 0x40, 0x20, 0x1C),
    (0x3C, 0x40, 0x30, 0x40, 0x3C), (0x44, 0x28, 0x10, 0x28, 0x44), (0x0C, 0x50, 0x50, 0x50, 0x3C),
    (0x44, 0x64, 0x54, 0x4C, 0x44), (0x00, 0x08, 0x36, 0x41, 0x00), (0x00, 0x00, 0x7F, 0x00, 0x00),
    (0x00, 0x41, 0x36, 0x08, 0x00), (0x08, 0x08, 0x2A, 0x1C, 0x08),
]

GLYPH_COLS = 5
GLYPH_ROWS = 7
RENDERABLE = "".join(chr(c) for c in range(32, 127))


def bitmap(ch: str) -> np.ndarray:
    """(7, 5) boolean dot matrix for ``ch``."""
    cols = _FONT_5X7[ord(ch) - 32]
    return np.array([[(col >> r) & 1 for col in cols] for r in range(GLYPH_ROWS)], dtype=bool)


@lru_cache(maxsize=None)
def strokes(ch: str) -> np.ndarray:
    """Segments (n, 2, 2) as ((x0, y0), (x1, y1)) in cell units, y downwards.

    Orthogonal neighbours are always joined; diagonal neighbours only when
    no orthogonal path already connects them. Isolated dots become
    zero-length segments.
    """
    if ch not in RENDERABLE:
        raise KeyError(ch)
    bm = bitmap(ch)
    segs = []
    lit = set(zip(*np.nonzero(bm)))
    for r, c in sorted(lit):
        joined = False
        for dr, dc in ((0, 1), (1, 0)):
            if (r + dr, c + dc) in lit:
                segs.append(((c, r), (c + dc, r + dr)))
                joined = True
        for dr, dc in ((1, 1), (1, -1)):
            if (r + dr, c + dc) in lit and (r, c + dc) not in lit and (r + dr, c) not in lit:
                segs.append(((c, r), (c + dc, r + dr)))
                joined = True
        if not joined and not any((r + dr, c + dc) in lit
                                   for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)):
            segs.append(((c, r), (c, r)))
    return np.array(segs, dtype=np.float64).reshape(-1, 2, 2)


def ink_columns(ch: str) -> tuple[int, int]:
    """First and last lit column (for proportional spacing); (0, -1) when blank."""
    bm = bitmap(ch)
    cols = np.nonzero(bm.any(axis=0))[0]
    if cols.size == 0:
        return 0, -1
    return int(cols[0]), int(cols[-1])
