"""Optimisation loop, learning-rate schedule, early stopping and fine-tuning."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .decoding import predict_texts
from .errors import ConfigError, NumericError, VocabularyError
from .metrics import corpus_metrics
from .model import HTRModel

log = logging.getLogger(__name__)


def lr_schedule(epoch: int, initial_lr: float, period: int) -> float:
    """Step decay: halve every ``period`` epochs."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return initial_lr * 0.5 ** (epoch // period)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (param, m, v) as new arrays."""
    if step < 1:
        raise ConfigError(f"Adam step counter must be >= 1, got {step}")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def check_finite(self) -> None:
        for name, p in self.params.items():
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for parameter {name}")

    def step(self, lr: float) -> None:
        self.check_finite()
        self.step_count += 1
        for name, p in self.params.items():
            new, self.m[name], self.v[name] = adam_step(
                p.data, p.grad, self.m[name], self.v[name], self.step_count, lr,
                self.beta1, self.beta2, self.eps)
            p.data = new.astype(p.dtype, copy=False)


def clip_grad_norm(params: dict, max_norm: float | None) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params.values()))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad *= p.grad.dtype.type(scale)
    return total


@dataclass
class LineData:
    """Preprocessed 64-pixel-high grayscale images and their transcriptions."""

    images: list[np.ndarray]
    texts: list[str]

    def __post_init__(self):
        if len(self.images) != len(self.texts):
            raise ConfigError(f"{len(self.images)} images but {len(self.texts)} texts")

    def __len__(self) -> int:
        return len(self.texts)

    def take(self, idx: Sequence[int]) -> "LineData":
        return LineData([self.images[i] for i in idx], [self.texts[i] for i in idx])

    @classmethod
    def from_manifest(cls, manifest, split: str | None = None) -> "LineData":
        from .synth.preprocess import preprocess

        if split is not None:
            manifest = manifest.split(split)
        images = [preprocess(im).pixels for im in manifest.load_images()]
        return cls(images, manifest.texts)


def width_bucketed_batches(widths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, group lines of similar width into batches, shuffle batch order.

    Lines are shuffled, cut into pools of 16 batches, each pool sorted by
    width; this keeps padding small without fixing batch composition.
    """
    order = rng.permutation(len(widths))
    pool = 16 * batch_size
    batches = []
    for s in range(0, len(order), pool):
        chunk = order[s:s + pool]
        chunk = chunk[np.argsort(widths[chunk], kind="stable")]
        batches.extend(chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def evaluate(model: HTRModel, data: LineData, batch_size: int = 32) -> dict[str, float]:
    hyps = predict_texts(model, data.images, batch_size=batch_size)
    c, w = corpus_metrics(list(zip(data.texts, hyps)))
    return {"cer": float(c), "wer": float(w)}


@dataclass
class TrainResult:
    checkpoint: Checkpoint           # final state, with best parameters attached
    history: list[dict] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def best_cer(self) -> float:
        return self.checkpoint.metrics.get("best_val_cer", math.inf)

    def best_model(self) -> HTRModel:
        return self.checkpoint.best_model()


def _check_alphabet(model: HTRModel, *datasets: LineData) -> None:
    for data in datasets:
        for t in data.texts:
            try:
                model.alphabet.encode_chars(t)
            except VocabularyError as exc:
                raise VocabularyError(f"transcription {t!r} does not fit the model alphabet: {exc}") from None


def train(model: HTRModel, train_data: LineData, val_data: LineData | None, cfg: TrainConfig, *,
          resume: Checkpoint | None = None, log_path: str | Path | None = None,
          checkpoint_dir: str | Path | None = None, time_limit: float | None = None,
          target_cer: float | None = None, stop_after: int | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch teacher-forced training with per-epoch validation.

    After every epoch the validation CER is measured by greedy decoding; the
    best parameters are retained and training stops after
    ``cfg.early_stop_patience`` epochs without improvement, after
    ``cfg.max_epochs``, when ``target_cer`` is reached, or when
    ``time_limit`` seconds have elapsed. ``stop_after`` ends the run after
    that many total epochs without marking it finished (used to produce a
    mid-run checkpoint). Without validation data the training set is used.

    Reloading a checkpoint written at the end of epoch k and passing it as
    ``resume`` continues with exactly the same batches and dropout masks.
    """
    cfg.validate()
    if len(train_data) == 0:
        raise ConfigError("empty training split")
    val = val_data if val_data is not None and len(val_data) else train_data
    _check_alphabet(model, train_data, val)
    params = model.parameters()
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    epoch = 0
    best_cer, best_epoch, best_state = math.inf, -1, None
    if resume is not None:
        model.load_state_dict(resume.params)
        opt.step_count = resume.adam_step
        opt.m = {k: np.array(v, dtype=params[k].dtype) for k, v in resume.adam_m.items()}
        opt.v = {k: np.array(v, dtype=params[k].dtype) for k, v in resume.adam_v.items()}
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
        epoch = resume.epoch
        best_cer = resume.metrics.get("best_val_cer", math.inf)
        best_epoch = resume.metrics.get("best_epoch", -1)
        best_state = resume.best_params
    widths = np.array([im.shape[1] for im in train_data.images])
    history: list[dict] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    stop_reason = "max_epochs"

    def snapshot() -> Checkpoint:
        return Checkpoint(model.cfg, cfg, model.state_dict(), epoch, opt.step_count,
                          {k: v.copy() for k, v in opt.m.items()}, {k: v.copy() for k, v in opt.v.items()},
                          rng.bit_generator.state, best_state,
                          {"best_val_cer": best_cer, "best_epoch": best_epoch,
                           "last": history[-1] if history else None})

    try:
        while epoch < cfg.max_epochs:
            if stop_after is not None and epoch >= stop_after:
                stop_reason = "stop_after"
                break
            t0 = time.perf_counter()
            lr = lr_schedule(epoch, cfg.initial_lr, cfg.halving_period)
            model.train()
            losses, counts = [], []
            for idx in width_bucketed_batches(widths, cfg.batch_size, rng):
                batch = model.batch([train_data.images[i] for i in idx], [train_data.texts[i] for i in idx],
                                    pad_width=cfg.pad_width)
                loss = model.loss(batch, cfg.label_smoothing, rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                model.zero_grad()
                loss.backward()
                opt.check_finite()
                clip_grad_norm(params, cfg.grad_clip)
                opt.step(lr)
                losses.append(value)
                counts.append(len(idx))
            train_loss = float(np.average(losses, weights=counts))
            metrics = evaluate(model, val)
            epoch += 1
            if metrics["cer"] < best_cer:
                best_cer, best_epoch, best_state = metrics["cer"], epoch, model.state_dict()
            record = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_cer": metrics["cer"],
                      "val_wer": metrics["wer"], "seconds": time.perf_counter() - t0}
            history.append(record)
            log.info("epoch %d lr %.2e loss %.4f val CER %.4f", epoch, lr, train_loss, metrics["cer"])
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(record)
            if ckpt_dir:
                ck = snapshot()
                save_checkpoint(ckpt_dir / "last.ckpt", ck)
                if best_epoch == epoch:
                    save_checkpoint(ckpt_dir / "best.ckpt", ck)
            if target_cer is not None and metrics["cer"] <= target_cer:
                stop_reason = "target_cer"
                break
            if epoch - best_epoch >= cfg.early_stop_patience:
                stop_reason = "early_stop"
                break
            if time_limit is not None and time.perf_counter() - started > time_limit:
                stop_reason = "time_limit"
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(snapshot(), history, stop_reason)


def pretrain_finetune(model: HTRModel, synth_train: LineData, synth_val: LineData | None,
                      real_train: LineData, real_val: LineData | None, cfg: TrainConfig,
                      finetune_cfg: TrainConfig | None = None, **kwargs) -> tuple[TrainResult, TrainResult]:
    """Train on synthetic lines to early stop, then continue from the best
    synthetic parameters on real lines with a fresh optimizer and schedule."""
    _check_alphabet(model, real_train, *([real_val] if real_val is not None else []))
    first = train(model, synth_train, synth_val, cfg, **kwargs)
    if first.checkpoint.best_params is not None:
        model.load_state_dict(first.checkpoint.best_params)
    second = train(model, real_train, real_val, finetune_cfg or replace(cfg), **kwargs)
    return first, second
