import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfhtr.config import DESK_CHARS, SynthConfig
from tfhtr.errors import ConfigError, InputError, ParseError, VocabularyError
from tfhtr.synth.augment import NO_AUGMENTATION, AugmentationSpec, augment
from tfhtr.synth.corpus import build_corpus, generate_texts, line_seeds, synthesize
from tfhtr.synth.imageio import read_image, read_pgm, write_pgm
from tfhtr.synth.manifest import (DatasetManifest, Sample, load_manifest, parse_manifest, subset,
                                  write_manifest)
from tfhtr.synth.preprocess import ImageTooWideError, preprocess
from tfhtr.synth.render import CURSIVE_STYLE, render_line
from tfhtr.text import Alphabet

LETTERS = DESK_CHARS.strip()


def test_render_is_deterministic_and_keeps_text():
    a = render_line("read me", 5)
    b = render_line("read me", 5)
    assert a.text == "read me" and a.height == 64 and a.pixels.dtype == np.uint8
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, render_line("read me", 6).pixels)
    assert a.pixels.min() < 128


def test_render_empty_and_unknown():
    blank = render_line("", 0)
    assert blank.text == "" and (blank.pixels == 255).all()
    assert blank.width < render_line("a", 0).width
    with pytest.raises(VocabularyError):
        render_line("naïve", 0)


def test_wider_text_renders_wider():
    short = render_line("ad", 1, CURSIVE_STYLE)
    long = render_line("ad" * 6, 1, CURSIVE_STYLE)
    assert long.width > 3 * short.width


def test_augment_disabled_is_identity():
    img = render_line("hello", 3)
    out = augment(img, NO_AUGMENTATION)
    np.testing.assert_array_equal(out.pixels, img.pixels)


def test_gamma_one_is_identity():
    img = render_line("hello", 3)
    spec = AugmentationSpec(enabled=frozenset({"gamma"}), gamma=(1.0, 1.0))
    out = augment(img, spec)
    assert np.abs(out.pixels.astype(int) - img.pixels).max() <= 1


def test_elastic_vanishing_displacement_is_identity():
    img = render_line("hello", 3)
    spec = AugmentationSpec(enabled=frozenset({"elastic"}), elastic_alpha=(1e-9, 1e-9),
                            elastic_sigma=(1.0, 1.0))
    out = augment(img, spec)
    assert np.abs(out.pixels.astype(int) - img.pixels).max() <= 1


def test_augment_rejects_unsafe_ranges():
    with pytest.raises(ConfigError):
        augment(render_line("a", 0), AugmentationSpec(rotate_deg=(-10.0, 10.0)))
    with pytest.raises(ConfigError):
        AugmentationSpec(shear=(0.2, 0.1)).validate()
    with pytest.raises(ConfigError):
        AugmentationSpec(enabled=frozenset({"sepia"})).validate()


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=LETTERS + " ", max_size=10), st.integers(0, 2**31 - 1))
def test_augment_keeps_text_shape_and_determinism(text, seed):
    img = render_line(text, seed % 1000)
    spec = AugmentationSpec(seed=seed)
    a, b = augment(img, spec), augment(img, spec)
    assert a.text == text
    assert a.pixels.shape == img.pixels.shape and a.pixels.dtype == np.uint8
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_preprocess_examples():
    img = np.full((128, 640), 255, dtype=np.uint8)
    img[40:80, 100:300] = 0
    out = preprocess(img, pad_width=400)
    assert out.pixels.shape == (64, 400)
    assert (out.pixels[:, 320:] == 255).all()
    assert out.pixels[30, 100] < 20
    same = np.random.default_rng(0).integers(0, 256, (64, 100)).astype(np.uint8)
    out = preprocess(same, pad_width=150)
    np.testing.assert_array_equal(out.pixels[:, :100], same)
    assert (out.pixels[:, 100:] == 255).all()


def test_preprocess_errors():
    with pytest.raises(ImageTooWideError) as info:
        preprocess(np.zeros((32, 200), dtype=np.uint8), pad_width=300)
    assert info.value.scaled_width == 400
    with pytest.raises(InputError):
        preprocess(np.zeros((0, 5), dtype=np.uint8))


@settings(max_examples=100, deadline=None)
@given(st.integers(8, 200), st.integers(1, 300), st.integers(0, 2**31 - 1))
def test_preprocess_idempotent(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(np.uint8)
    once = preprocess(img)
    assert once.height == 64
    np.testing.assert_array_equal(preprocess(once).pixels, once.pixels)
    pad = max(once.width, 10) + 3
    p1 = preprocess(img, pad_width=pad)
    np.testing.assert_array_equal(preprocess(p1, pad_width=pad).pixels, p1.pixels)


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (64, 37)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)
    (tmp_path / "b.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ParseError):
        read_image(tmp_path / "b.pgm")


def manifest_of(n_train, n_other=10):
    samples = [Sample(f"tr{i}.pgm", "a", "train") for i in range(n_train)]
    samples += [Sample(f"te{i}.pgm", "b", "test") for i in range(n_other)]
    return DatasetManifest(samples)


def test_subset_examples():
    m = manifest_of(100)
    half = subset(m, 0.5, 3)
    assert len(half.split("train")) == 50
    assert half.split("test").samples == m.split("test").samples
    assert subset(m, 1.0, 3).samples == m.samples
    assert subset(m, 0.5, 3).samples == half.samples
    assert subset(m, 0.5, 4).samples != half.samples
    assert len(subset(m, 0.29, 0).split("train")) == 29
    with pytest.raises(ConfigError):
        subset(m, 0.0, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 60), st.floats(0.01, 1.0), st.integers(0, 10**6))
def test_subset_properties(n, fraction, seed):
    m = manifest_of(n, 3)
    s = subset(m, fraction, seed)
    train = s.split("train").samples
    assert len(train) == int(np.floor(fraction * n + 1e-9))
    assert len(set(train)) == len(train) and set(train) <= set(m.split("train").samples)
    assert s.split("test").samples == m.split("test").samples
    order = [m.samples.index(x) for x in s.samples]
    assert order == sorted(order)


def test_manifest_round_trip_and_errors(tmp_path):
    m = manifest_of(3, 2)
    write_manifest(tmp_path / "m.jsonl", m)
    back = load_manifest(tmp_path / "m.jsonl")
    assert back.samples == m.samples and back.root == tmp_path
    with pytest.raises(ParseError, match="manifest line 2"):
        parse_manifest(['{"image": "a", "text": "x", "split": "train"}', "{not json"])
    with pytest.raises(ParseError, match="manifest line 1"):
        parse_manifest(['{"image": "a", "text": "x", "split": "dev"}'])
    with pytest.raises(ParseError, match="both"):
        parse_manifest([json.dumps({"image": "a", "text": "x", "split": s}) for s in ("train", "test")])
    with pytest.raises(VocabularyError):
        load_manifest(tmp_path / "m.jsonl", Alphabet("a"))


def test_generated_texts_are_split_and_contain_oov():
    t = generate_texts(SynthConfig(), LETTERS, 300, 20, 40, seed=1)
    assert not set(t.test) & set(t.train)
    train_words = {w for ln in t.train for w in ln.split()}
    oov_lines = [ln for ln in t.test if set(ln.split()) - train_words]
    assert len(oov_lines) >= 20
    assert all(set(w) <= set(LETTERS) for w in t.oov_words)


def test_line_seeds_are_prefix_stable():
    assert line_seeds(4, 10)[:5] == line_seeds(4, 5)
    assert len(set(line_seeds(4, 1000))) == 1000


def test_synthesize_is_deterministic():
    a = synthesize("to dine", 9, augmentation=AugmentationSpec())
    b = synthesize("to dine", 9, augmentation=AugmentationSpec())
    assert a.height == 64 and a.text == "to dine"
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_built_corpus_character_frequencies(tmp_path):
    cfg = SynthConfig(n_lines=60, seed=2)
    path = build_corpus(tmp_path, cfg, LETTERS)
    m = load_manifest(path, Alphabet(DESK_CHARS))
    assert len(m) == 60
    assert {s.split for s in m.samples} == {"train", "val", "test"}
    source = Counter()
    rendered = Counter()
    for s, img in zip(m.samples, m.load_images()):
        assert img.shape[0] == 64
        rendered.update(s.text)
    t = generate_texts(cfg, LETTERS, 48, 6, 6, cfg.seed)
    for ln in t.train + t.val + t.test:
        source.update(ln)
    assert rendered == source
    assert (tmp_path / "oov_words.txt").exists()
