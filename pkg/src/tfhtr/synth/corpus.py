"""Synthetic corpus generation: text sampling, rendering, and manifest output."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import SynthConfig
from ..errors import ConfigError
from .augment import AugmentationSpec, augment
from .imageio import write_image
from .manifest import DatasetManifest, Sample, write_manifest
from .preprocess import preprocess
from .render import CLEAN_STYLE, LineImage, StyleSpec, render_line

log = logging.getLogger(__name__)

VOWELS = "aeio"
CONSONANTS = "dhlmnrst"


def pseudo_word(rng: np.random.Generator, min_len: int, max_len: int, letters: str) -> str:
    """Alternating consonant/vowel word, restricted to ``letters``."""
    vowels = [c for c in VOWELS if c in letters] or list(letters)
    cons = [c for c in CONSONANTS if c in letters] or list(letters)
    n = int(rng.integers(min_len, max_len + 1))
    start_vowel = rng.random() < 0.3
    out = []
    for k in range(n):
        pool = vowels if (k % 2 == 0) == start_vowel else cons
        out.append(pool[int(rng.integers(len(pool)))])
    return "".join(out)


def make_vocabulary(n_words: int, cfg: SynthConfig, letters: str, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    vocab: dict[str, None] = {}
    attempts = 0
    while len(vocab) < n_words:
        vocab[pseudo_word(rng, cfg.min_word_length, cfg.max_word_length, letters)] = None
        attempts += 1
        if attempts > 100 * n_words:
            raise ConfigError(f"cannot draw {n_words} distinct words from letters {letters!r}")
    return list(vocab)


def sample_line(rng: np.random.Generator, vocab: list[str], cfg: SynthConfig,
                must_include: list[str] | None = None) -> str:
    for _ in range(100):
        n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        words = [vocab[int(rng.integers(len(vocab)))] for _ in range(n)]
        if must_include:
            words[int(rng.integers(n))] = must_include[int(rng.integers(len(must_include)))]
        line = " ".join(words)
        if len(line) <= cfg.max_chars:
            return line
    return words[0][: cfg.max_chars]


@dataclass
class CorpusTexts:
    train: list[str]
    val: list[str]
    test: list[str]
    oov_words: list[str]      # words that occur only in the test split


def generate_texts(cfg: SynthConfig, letters: str, n_train: int, n_val: int, n_test: int,
                   seed: int, vocab_size: int = 400, oov_share: float = 0.15) -> CorpusTexts:
    """Split texts with no line shared between train and test.

    A held-out slice of the vocabulary appears only in test lines, and about
    half of the test lines contain one of those words.
    """
    vocab = make_vocabulary(vocab_size, cfg, letters, seed)
    n_oov = max(1, int(round(oov_share * vocab_size)))
    seen_vocab, oov = vocab[:-n_oov], vocab[-n_oov:]
    rng = np.random.default_rng([seed, 1])
    train = [sample_line(rng, seen_vocab, cfg) for _ in range(n_train)]
    val = [sample_line(rng, seen_vocab, cfg) for _ in range(n_val)]
    train_set = set(train)
    test: list[str] = []
    while len(test) < n_test:
        line = sample_line(rng, seen_vocab, cfg, oov if len(test) % 2 == 0 else None)
        if line not in train_set:
            test.append(line)
    return CorpusTexts(train, val, test, oov)


def texts_from_file(path: str | Path, cfg: SynthConfig, seed: int) -> CorpusTexts:
    lines = [ln.rstrip("\n") for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    order = np.random.default_rng(seed).permutation(len(lines))
    lines = [lines[i] for i in order]
    n_test = int(cfg.test_fraction * len(lines))
    n_val = int(cfg.val_fraction * len(lines))
    test, val, train = lines[:n_test], lines[n_test:n_test + n_val], lines[n_test + n_val:]
    train_words = {w for ln in train for w in ln.split()}
    oov = sorted({w for ln in test for w in ln.split()} - train_words)
    return CorpusTexts(train, val, test, oov)


def line_seeds(seed: int, n: int) -> list[int]:
    """Independent 63-bit seeds for each line, stable for any n."""
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1)) for child in ss.spawn(n)]


def synthesize(text: str, seed: int, style: StyleSpec = CLEAN_STYLE,
               augmentation: AugmentationSpec | None = None) -> LineImage:
    """Render, optionally augment, and height-normalise one line."""
    img = render_line(text, seed, style)
    if augmentation is not None:
        img = augment(img, augmentation.with_seed(seed ^ 0x5EED))
    return preprocess(img)


def _synth_job(args):
    return synthesize(*args)


def synthesize_many(texts: list[str], seeds: list[int], style: StyleSpec = CLEAN_STYLE,
                    augmentation: AugmentationSpec | None = None, workers: int = 1) -> list[LineImage]:
    jobs = [(t, s, style, augmentation) for t, s in zip(texts, seeds)]
    if workers <= 1:
        return [_synth_job(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_synth_job, jobs, chunksize=32))


def build_corpus(out_dir: str | Path, cfg: SynthConfig, letters: str, style: StyleSpec = CLEAN_STYLE,
                 augmentation: AugmentationSpec | None = None, workers: int = 1) -> Path:
    """Write images/ and manifest.jsonl under ``out_dir``; returns the manifest path."""
    cfg.validate()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if cfg.corpus:
        texts = texts_from_file(cfg.corpus, cfg, cfg.seed)
    else:
        n_test = int(round(cfg.test_fraction * cfg.n_lines))
        n_val = int(round(cfg.val_fraction * cfg.n_lines))
        texts = generate_texts(cfg, letters, cfg.n_lines - n_val - n_test, n_val, n_test, cfg.seed)
    if augmentation is None and cfg.augment:
        augmentation = AugmentationSpec()
    tagged = ([(t, "train") for t in texts.train] + [(t, "val") for t in texts.val]
              + [(t, "test") for t in texts.test])
    seeds = line_seeds(cfg.seed, len(tagged))
    images = synthesize_many([t for t, _ in tagged], seeds, style, augmentation, workers)
    samples = []
    for k, ((text, split), img) in enumerate(zip(tagged, images)):
        name = f"images/{split}_{k:06d}.{cfg.image_format}"
        write_image(out / name, img.pixels)
        samples.append(Sample(name, text, split))
    path = out / "manifest.jsonl"
    write_manifest(path, DatasetManifest(samples, out))
    if texts.oov_words:
        (out / "oov_words.txt").write_text("\n".join(texts.oov_words) + "\n", encoding="utf-8")
    log.info("wrote %d lines to %s", len(samples), out)
    return path
