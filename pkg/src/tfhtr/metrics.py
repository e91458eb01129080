"""Character and word error rates from unit-cost Levenshtein alignments."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import UndefinedMetricError


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    def rate(self) -> Fraction:
        if self.reference_length == 0:
            raise UndefinedMetricError("error rate undefined for an empty reference")
        return Fraction(self.distance, self.reference_length)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    return edit_counts(ref, hyp).distance


def edit_counts(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Minimum-cost alignment of ``hyp`` against ``ref``.

    Ties between operations are broken substitution > deletion > insertion
    so the breakdown is deterministic; the total is always the Levenshtein
    distance.
    """
    n, m = len(ref), len(hyp)
    # each cell: (cost, subs, ins, dels)
    prev = [(j, 0, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0, i)]
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1]
            if r == hyp[j - 1]:
                best = diag
            else:
                best = (diag[0] + 1, diag[1] + 1, diag[2], diag[3])
            up = prev[j]
            if up[0] + 1 < best[0]:
                best = (up[0] + 1, up[1], up[2], up[3] + 1)
            left = cur[j - 1]
            if left[0] + 1 < best[0]:
                best = (left[0] + 1, left[1], left[2] + 1, left[3])
            cur.append(best)
        prev = cur
    _, s, ins, d = prev[m]
    return EditCounts(s, ins, d, n)


def words(text: str) -> list[str]:
    """Whitespace tokenisation; punctuation stays attached."""
    return text.split()


def cer(reference: str, hypothesis: str) -> Fraction:
    if not reference:
        raise UndefinedMetricError("CER undefined for an empty reference")
    return edit_counts(reference, hypothesis).rate()


def wer(reference: str, hypothesis: str) -> Fraction:
    ref = words(reference)
    if not ref:
        raise UndefinedMetricError("WER undefined for a reference without words")
    return edit_counts(ref, words(hypothesis)).rate()


def corpus_metrics(pairs: Sequence[tuple[str, str]]) -> tuple[Fraction, Fraction]:
    """Micro-averaged (CER, WER): total edits over total reference length."""
    if not pairs:
        raise UndefinedMetricError("corpus metrics need at least one pair")
    c_edits = c_len = w_edits = w_len = 0
    for k, (ref, hyp) in enumerate(pairs):
        if not ref or not words(ref):
            raise UndefinedMetricError(f"pair {k}: empty reference")
        c = edit_counts(ref, hyp)
        w = edit_counts(words(ref), words(hyp))
        c_edits += c.distance
        c_len += c.reference_length
        w_edits += w.distance
        w_len += w.reference_length
    return Fraction(c_edits, c_len), Fraction(w_edits, w_len)


def format_report(ids: Sequence[str], pairs: Sequence[tuple[str, str]]) -> str:
    """Tab-separated per-sample rates plus a corpus footer (4 decimals)."""
    lines = []
    for sid, (ref, hyp) in zip(ids, pairs):
        lines.append(f"{sid}\t{float(cer(ref, hyp)):.4f}\t{float(wer(ref, hyp)):.4f}")
    c, w = corpus_metrics(pairs)
    lines.append(f"corpus\tCER={float(c):.4f}\tWER={float(w):.4f}")
    return "\n".join(lines) + "\n"
