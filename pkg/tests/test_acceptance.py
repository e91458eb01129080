"""Acceptance criteria 1-10, one test each, each printing a single verdict line.

Criteria 6-10 train models and are marked ``slow``; the models trained for
6 and 7 are shared with 8-10 through module fixtures.
"""

import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from tfhtr.config import DESK_CHARS, PAPER_CHARS, ModelConfig, SynthConfig, TrainConfig
from tfhtr.decoding import decode_batch, predict_texts
from tfhtr.gradcheck import tiny_model_gradcheck
from tfhtr.lm import CharNGramLM
from tfhtr.metrics import corpus_metrics, edit_counts, wer
from tfhtr.model import HTRModel
from tfhtr.synth.augment import AugmentationSpec
from tfhtr.synth.corpus import build_corpus, generate_texts, line_seeds, synthesize_many
from tfhtr.synth.manifest import load_manifest, subset
from tfhtr.synth.render import CURSIVE_STYLE
from tfhtr.tensor import no_grad
from tfhtr.text import Alphabet, IncrementalState, smooth_targets
from tfhtr.training import LineData, evaluate, train

from conftest import ACCEPTANCE_LINES
from oracles import edit_graph_distances, smoothed_targets_oracle

LETTERS = DESK_CHARS.strip()


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def desk_model(seed=0, **kw) -> HTRModel:
    return HTRModel(ModelConfig(max_length=24, **kw), np.random.default_rng(seed))


# -- 1-5: properties --------------------------------------------------------

def test_1_gradient_integrity():
    t0 = time.perf_counter()
    res = tiny_model_gradcheck()
    elapsed = time.perf_counter() - t0
    verdict(1, res.max_rel_error < 1e-4 and elapsed < 30.0,
            f"max relative error {res.max_rel_error:.2e} over {res.checked} entries "
            f"(limit 1e-4), {elapsed:.1f} s (limit 30 s)")


def test_2_causality():
    model = desk_model(seed=1)
    model.eval()
    rng = np.random.default_rng(2)
    images = [rng.integers(0, 256, (64, int(rng.integers(16, 240)))).astype(np.uint8) for _ in range(10)]
    with no_grad():
        encoded = [model.encode(model.batch([im])) for im in images]
    violations = 0
    for trial in range(1000):
        memory, mask = encoded[trial % len(encoded)]
        n = int(rng.integers(2, 24))
        ids = rng.integers(0, len(model.alphabet), (1, n))
        j = int(rng.integers(0, n - 1))
        other = ids.copy()
        other[0, j + 1:] = (ids[0, j + 1:] + rng.integers(1, len(model.alphabet), n - j - 1)) % len(model.alphabet)
        with no_grad():
            a = model.transcriber(ids, memory, mask).data
            b = model.transcriber(other, memory, mask).data
        violations += not np.array_equal(a[0, : j + 1], b[0, : j + 1])
    verdict(2, violations == 0, f"{violations} of 1000 trials changed logits at or before the perturbed position")


def test_3_non_recurrence_equivalence():
    model = desk_model(seed=3, precision=32)
    model.eval()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        img = rng.integers(0, 256, (64, int(rng.integers(8, 300)))).astype(np.uint8)
        n = int(rng.integers(1, 23))
        ids = np.concatenate([[model.alphabet.start], rng.integers(3, len(model.alphabet), n - 1)])[None, :]
        with no_grad():
            memory, mask = model.encode(model.batch([img]))
            full = model.transcriber(ids, memory, mask).data
            state = IncrementalState(model.transcriber, memory, mask)
            steps = np.stack([state.step(ids[:, t]).data for t in range(n)], axis=1)
        worst = max(worst, float(np.abs(full - steps).max()))
    verdict(3, worst <= 1e-5, f"max |full - incremental| logit difference {worst:.2e} over 100 inputs (limit 1e-5)")


def test_4_metric_oracle():
    strings, dist = edit_graph_distances("abc", 6)
    mismatches = 0
    for i, ref in enumerate(strings):
        ref_words = " ".join(ref)
        for j, hyp in enumerate(strings):
            c = edit_counts(ref, hyp)
            if c.distance != dist[i, j]:
                mismatches += 1
            elif ref and (c.rate() != Fraction(int(dist[i, j]), len(ref))
                          or wer(ref_words, " ".join(hyp)) != Fraction(int(dist[i, j]), len(ref))):
                mismatches += 1
    examples = [
        edit_counts("kitten", "sitting").rate() == Fraction(1, 2),
        wer("the cat sat", "the bat sat") == Fraction(1, 3),
        wer("one two", "one two three") == Fraction(1, 2),
        corpus_metrics([("a", "b"), ("x" * 100, "x" * 100)])[0] == Fraction(1, 101),
    ]
    n = len(strings) ** 2
    verdict(4, mismatches == 0 and all(examples),
            f"{mismatches} mismatches against edit-graph search over {n} pairs; "
            f"{sum(examples)}/{len(examples)} worked examples")


def test_5_label_smoothing():
    n = len(PAPER_CHARS) + 3
    sm = smooth_targets(np.eye(n), 0.4)
    true, other = smoothed_targets_oracle(n, 0.4)
    off = sm[~np.eye(n, dtype=bool)]
    ok = (n == 83 and abs(true - 0.604819) <= 1e-6 and abs(other - 0.004819) <= 1e-6
          and np.abs(np.diag(sm) - true).max() <= 1e-12 and np.abs(off - other).max() <= 1e-12
          and np.abs(sm.sum(axis=0) - 1.0).max() <= 1e-12)
    verdict(5, ok, f"|A|={n}: true {np.diag(sm)[0]:.6f}, other {off[0]:.6f}, "
                   f"max column-sum error {np.abs(sm.sum(axis=0) - 1).max():.1e}")


# -- 6-10: training runs ----------------------------------------------------

OVERFIT_LINES = 32
OVERFIT_TRAIN = TrainConfig(initial_lr=1e-3, batch_size=4, max_epochs=300, early_stop_patience=300, seed=0)


@pytest.fixture(scope="module")
def overfit():
    texts = generate_texts(SynthConfig(), LETTERS, OVERFIT_LINES, 0, 0, seed=7).train
    images = [im.pixels for im in synthesize_many(texts, line_seeds(7, OVERFIT_LINES),
                                                  augmentation=AugmentationSpec())]
    data = LineData(images, texts)
    # the overfit profile: desk architecture, no dropout
    model = desk_model(seed=0, dropout=0.0)
    t0 = time.perf_counter()
    result = train(model, data, None, OVERFIT_TRAIN, target_cer=0.0, time_limit=300.0)
    elapsed = time.perf_counter() - t0
    return result, elapsed, data


@pytest.mark.slow
def test_6_overfit_convergence(overfit):
    result, elapsed, data = overfit
    model = result.best_model()
    hyps = predict_texts(model, data.images)
    exact = sum(h == t for h, t in zip(hyps, data.texts))
    cer = float(corpus_metrics(list(zip(data.texts, hyps)))[0])
    epochs = len(result.history)
    verdict(6, cer < 0.05 and epochs <= 300 and elapsed < 300 and exact == len(data),
            f"train CER {cer:.4f} after {epochs} epochs in {elapsed:.0f} s; "
            f"{exact}/{len(data)} lines reproduced exactly")


GEN_TRAIN = TrainConfig(initial_lr=1e-3, batch_size=8, max_epochs=60, early_stop_patience=20, seed=0)
GEN_TIME_LIMIT = 3000.0


@pytest.fixture(scope="module")
def generalization():
    texts = generate_texts(SynthConfig(), LETTERS, 2000, 100, 200, seed=11)
    seeds = line_seeds(11, 2300)
    aug = AugmentationSpec()
    render = lambda t, s: [im.pixels for im in synthesize_many(t, s, augmentation=aug)]
    train_data = LineData(render(texts.train, seeds[:2000]), texts.train)
    val_data = LineData(render(texts.val, seeds[2000:2100]), texts.val)
    test_data = LineData(render(texts.test, seeds[2100:]), texts.test)
    model = desk_model(seed=0, dropout=0.0)
    result = train(model, train_data, val_data, GEN_TRAIN, time_limit=GEN_TIME_LIMIT)
    return result, texts, train_data, test_data


@pytest.mark.slow
def test_7_generalization(generalization):
    result, texts, _, test = generalization
    model = result.best_model()
    hyps = predict_texts(model, test.images)
    cer = float(corpus_metrics(list(zip(test.texts, hyps)))[0])
    train_words = {w for ln in texts.train for w in ln.split()}
    oov = [k for k, t in enumerate(test.texts) if set(t.split()) - train_words]
    oov_cer = float(corpus_metrics([(test.texts[k], hyps[k]) for k in oov])[0])
    verdict(7, cer < 0.15 and len(oov) > 0,
            f"test CER {cer:.4f} on {len(test)} unseen lines (limit 0.15); "
            f"{len(oov)} lines with out-of-vocabulary words at CER {oov_cer:.4f}; "
            f"{len(result.history)} epochs, stop {result.stop_reason}")


@pytest.mark.slow
def test_9_shallow_fusion(generalization):
    result, texts, _, test = generalization
    model = result.best_model()
    lm = CharNGramLM(DESK_CHARS, order=5).fit(texts.train)
    plain = predict_texts(model, test.images)
    fused = predict_texts(model, test.images, lm=lm, lm_weight=0.2)

    def cer(hyps, keep=lambda k: True):
        return 100 * float(corpus_metrics([(t, h) for k, (t, h) in enumerate(zip(test.texts, hyps)) if keep(k)])[0])

    oov = set(texts.oov_words)
    has_oov = lambda k: bool(set(test.texts[k].split()) & oov)
    delta = abs(cer(fused) - cer(plain))
    verdict(9, delta < 0.5,
            f"CER {cer(plain):.2f}% without and {cer(fused):.2f}% with a 5-gram LM at weight 0.2; difference "
            f"{delta:.2f} points (limit 0.5); lines with unseen words {cer(plain, has_oov):.2f}% -> "
            f"{cer(fused, has_oov):.2f}%, others {cer(plain, lambda k: not has_oov(k)):.2f}% -> "
            f"{cer(fused, lambda k: not has_oov(k)):.2f}%")


def attention_inversions(model, images) -> list[int]:
    """Decreases of the averaged cross-attention argmax across each decoded line."""
    counts = []
    for res in decode_batch(model, images):
        rows = res.attention.weights
        if res.stop_reason == "end_symbol":
            rows = rows[:-1]
        counts.append(int((np.diff(rows.argmax(axis=1)) < 0).sum()))
    return counts


@pytest.mark.slow
def test_10_attention_sanity(overfit, generalization):
    data = overfit[2]
    counts = attention_inversions(overfit[0].best_model(), data.images)
    # diagnostic only: the same measure on the model trained for criterion 7
    gen = attention_inversions(generalization[0].best_model(), data.images)
    verdict(10, max(counts) <= 2,
            f"overfit model: max {max(counts)} inversions per line (limit 2), {sum(c > 2 for c in counts)}/"
            f"{len(counts)} lines over, mean {np.mean(counts):.2f}; criterion-7 model on the same lines: "
            f"max {max(gen)}, {sum(c > 2 for c in gen)} over, mean {np.mean(gen):.2f}")


REAL_LINES = 1000
FEW_SHOT = 0.2
FINETUNE = TrainConfig(initial_lr=1e-3, batch_size=8, max_epochs=60, early_stop_patience=10)
FINETUNE_TIME_LIMIT = 900.0


@pytest.mark.slow
def test_8_pretrain_finetune_trend(generalization, tmp_path):
    pretrained = generalization[0].checkpoint
    cfg = SynthConfig(n_lines=REAL_LINES, seed=23, val_fraction=0.1, test_fraction=0.2)
    manifest = load_manifest(build_corpus(tmp_path, cfg, LETTERS, CURSIVE_STYLE), Alphabet(DESK_CHARS))
    val = LineData.from_manifest(manifest, "val")
    test = LineData.from_manifest(manifest, "test")
    rows = []
    for seed in (0, 1, 2):
        few = LineData.from_manifest(subset(manifest, FEW_SHOT, seed), "train")
        run_cfg = replace(FINETUNE, seed=seed)
        scratch = train(desk_model(seed=seed, dropout=0.0), few, val, run_cfg, time_limit=FINETUNE_TIME_LIMIT)
        tuned = train(pretrained.best_model(), few, val, run_cfg, time_limit=FINETUNE_TIME_LIMIT)
        rows.append((seed, evaluate(scratch.best_model(), test)["cer"], evaluate(tuned.best_model(), test)["cer"]))
    ok = all(t < s for _, s, t in rows)
    detail = "; ".join(f"seed {k}: scratch {s:.4f} vs pretrained {t:.4f}" for k, s, t in rows)
    verdict(8, ok, f"{len(few)} cursive train lines ({FEW_SHOT:.0%}), test CER {detail}")
