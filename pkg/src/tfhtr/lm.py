"""Character n-gram language model for shallow-fusion decoding."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigError, VocabularyError
from .text import Alphabet


class CharNGramLM(BaseEstimator):
    """Add-alpha smoothed character n-gram model over an :class:`Alphabet`.

    Conditionals use the longest observed suffix of the context (up to
    ``order - 1`` symbols, left-padded with the start symbol). Every
    distribution is normalised over the full alphabet, specials included.

    Parameters
    ----------
    alphabet : str
        Content characters (the specials are added implicitly).
    order : int
        n of the n-gram.
    alpha : float
        Additive smoothing constant.
    weight : float
        Shallow-fusion weight applied by the decoder.
    """

    def __init__(self, alphabet: str = "", order: int = 5, alpha: float = 0.01, weight: float = 0.2):
        self.alphabet = alphabet
        self.order = order
        self.alpha = alpha
        self.weight = weight

    def _check(self):
        if self.order < 1:
            raise ConfigError(f"order must be >= 1, got {self.order}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")

    def fit(self, texts: Iterable[str], y=None):
        self._check()
        self.alphabet_ = Alphabet(self.alphabet)
        a = self.alphabet_
        counts: dict[tuple, np.ndarray] = defaultdict(lambda: np.zeros(len(a), dtype=np.float64))
        for text in texts:
            ids = [a.start] * (self.order - 1) + a.encode_chars(text) + [a.end]
            for t in range(self.order - 1, len(ids)):
                for k in range(self.order):
                    counts[tuple(ids[t - k:t])][ids[t]] += 1
        self.counts_ = dict(counts)
        self._cache: dict[tuple, np.ndarray] = {}
        return self

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        """log P(next | context) over all alphabet indices.

        ``context`` is the token history as alphabet indices; a leading
        start symbol is allowed.
        """
        a = self.alphabet_
        ctx = [int(i) for i in context if int(i) != a.start]
        for i in ctx:
            if not 0 <= i < len(a):
                raise VocabularyError(f"context index {i} outside the alphabet")
        ctx = [a.start] * (self.order - 1) + ctx
        ctx = tuple(ctx[len(ctx) - (self.order - 1):]) if self.order > 1 else ()
        if ctx in self._cache:
            return self._cache[ctx]
        for k in range(len(ctx), -1, -1):
            key = ctx[len(ctx) - k:]
            if key in self.counts_:
                c = self.counts_[key]
                break
        else:
            c = np.zeros(len(a))
        probs = (c + self.alpha) / (c.sum() + self.alpha * len(a))
        out = np.log(probs)
        self._cache[ctx] = out
        return out

    def log_probs_text(self, context: str) -> np.ndarray:
        return self.log_probs(self.alphabet_.encode_chars(context))

    def score(self, texts: Iterable[str], y=None) -> float:
        """Mean log-probability per predicted symbol (higher is better)."""
        total, n = 0.0, 0
        for text in texts:
            ids = self.alphabet_.encode_chars(text) + [self.alphabet_.end]
            for t, nxt in enumerate(ids):
                total += self.log_probs(ids[:t])[nxt]
                n += 1
        return total / max(n, 1)
