"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(fn: Callable[[], float], array: np.ndarray, step: float = 1e-6,
                     indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in it:
        orig = array[idx]
        array[idx] = orig + step
        hi = fn()
        array[idx] = orig - step
        lo = fn()
        array[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-6,
                    floor: float = 1e-6, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``max_entries`` caps the number of entries probed per tensor (sampled
    with ``rng``); ``None`` probes every entry.
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def scalar() -> float:
        return float(loss_fn().data)

    worst, worst_name, checked = 0.0, "", 0
    for name, p in params.items():
        indices = list(np.ndindex(p.shape))
        if max_entries is not None and len(indices) > max_entries:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in pick]
        numeric = numeric_gradient(scalar, p.data, step, indices)
        sel = tuple(np.array(indices).T) if indices else ()
        if not indices:
            continue
        err = relative_error(analytic[name][sel], numeric[sel], floor)
        checked += len(indices)
        k = int(np.argmax(err))
        if err[k] > worst:
            worst = float(err[k])
            worst_name = f"{name}{indices[k]}"
    return GradCheckResult(worst, worst_name, checked)


def tiny_model_gradcheck(seed: int = 0, step: float = 1e-5, floor: float = 1e-6,
                         label_smoothing: float = 0.4) -> GradCheckResult:
    """Check every parameter of a tiny 64-bit recogniser.

    f=8, one encoder and one decoder block, 2 heads, 4 visual columns,
    N=6. Parameters are jittered away from their initial values first:
    zero biases put ReLU inputs of blank pixels exactly on the kink, where
    central differences average the two one-sided slopes.
    """
    from .config import CnnConfig, ModelConfig
    from .model import HTRModel

    cfg = ModelConfig(feature_size=8, encoder_blocks=1, decoder_blocks=1, heads=2, max_length=6,
                      dropout=0.0, precision=64, cnn=CnnConfig(channels=(4, 6, 8)))
    model = HTRModel(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for p in model.parameters().values():
        p.data += rng.normal(0.0, 0.1, p.shape)
    width = 4 * cfg.cnn.horizontal_stride
    images = [rng.integers(0, 256, (64, w)).astype(np.uint8) for w in (width, width - 3)]
    letters = cfg.alphabet.strip()
    texts = ["".join(rng.choice(list(letters), n)) for n in (4, 2)]
    batch = model.batch(images, texts)
    return check_gradients(lambda: model.loss(batch, label_smoothing), model.parameters(), step, floor)
