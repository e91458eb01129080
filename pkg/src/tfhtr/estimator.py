"""scikit-learn style front end: ``HTRRecognizer().fit(images, texts).predict(images)``."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import DESK_CHARS, CnnConfig, ModelConfig, TrainConfig
from .decoding import predict_texts
from .errors import InputError
from .metrics import corpus_metrics
from .model import HTRModel
from .synth.preprocess import TARGET_HEIGHT, preprocess
from .text import Alphabet
from .training import LineData, train


def check_line_images(X, target_height: int = TARGET_HEIGHT) -> list[np.ndarray]:
    """Coerce to a list of 2-D uint8 arrays of height ``target_height``.

    Float inputs are taken as 8-bit intensities and rounded; other heights
    are rescaled keeping the aspect ratio.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise InputError("expected a sequence of images, got a single 2-D array")
    out = []
    for k, im in enumerate(X):
        arr = np.asarray(im)
        if arr.ndim == 3 and arr.shape[-1] == 1:
            arr = arr[..., 0]
        if arr.ndim != 2 or arr.size == 0:
            raise InputError(f"image {k}: expected a nonempty 2-D grayscale array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.isfinite(arr).all():
                raise InputError(f"image {k}: non-finite pixel values")
            arr = np.clip(np.round(arr), 0, 255).astype(np.uint8)
        if arr.shape[0] != target_height:
            arr = preprocess(arr, target_height=target_height).pixels
        out.append(arr)
    if not out:
        raise InputError("no images given")
    return out


def check_texts(y, alphabet: Alphabet, n: int | None = None) -> list[str]:
    texts = [str(t) for t in y]
    if n is not None and len(texts) != n:
        raise InputError(f"got {n} images but {len(texts)} transcriptions")
    for t in texts:
        alphabet.encode_chars(t)
    return texts


class HTRRecognizer(BaseEstimator):
    """Transformer line recogniser with the estimator interface.

    Constructor arguments mirror :class:`ModelConfig` and
    :class:`TrainConfig`; ``fit`` builds and trains a fresh model.
    """

    def __init__(self, alphabet=DESK_CHARS, feature_size=64, encoder_blocks=2, decoder_blocks=2,
                 heads=2, max_length=32, dropout=0.1, cnn_channels=(16, 32, 64), initial_lr=1e-3,
                 halving_period=20, label_smoothing=0.4, batch_size=8, max_epochs=200,
                 early_stop_patience=20, seed=0, precision=32, time_limit=None):
        self.alphabet = alphabet
        self.feature_size = feature_size
        self.encoder_blocks = encoder_blocks
        self.decoder_blocks = decoder_blocks
        self.heads = heads
        self.max_length = max_length
        self.dropout = dropout
        self.cnn_channels = cnn_channels
        self.initial_lr = initial_lr
        self.halving_period = halving_period
        self.label_smoothing = label_smoothing
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.seed = seed
        self.precision = precision
        self.time_limit = time_limit

    def model_config(self) -> ModelConfig:
        return ModelConfig(alphabet=self.alphabet, feature_size=self.feature_size,
                           encoder_blocks=self.encoder_blocks, decoder_blocks=self.decoder_blocks,
                           heads=self.heads, max_length=self.max_length, dropout=self.dropout,
                           precision=self.precision, cnn=CnnConfig(channels=tuple(self.cnn_channels)))

    def train_config(self) -> TrainConfig:
        return TrainConfig(initial_lr=self.initial_lr, halving_period=self.halving_period,
                           label_smoothing=self.label_smoothing, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, early_stop_patience=self.early_stop_patience,
                           seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        mcfg = self.model_config()
        mcfg.validate()
        alphabet = Alphabet(mcfg.alphabet)
        images = check_line_images(X)
        texts = check_texts(y, alphabet, len(images))
        val = None
        if X_val is not None:
            val_images = check_line_images(X_val)
            val = LineData(val_images, check_texts(y_val, alphabet, len(val_images)))
        model = HTRModel(mcfg, np.random.default_rng(self.seed))
        result = train(model, LineData(images, texts), val, self.train_config(), time_limit=self.time_limit)
        self.model_ = result.best_model()
        self.history_ = result.history
        self.stop_reason_ = result.stop_reason
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        return predict_texts(self.model_, check_line_images(X))

    def score(self, X, y) -> float:
        """1 - corpus CER."""
        hyps = self.predict(X)
        cer, _ = corpus_metrics(list(zip([str(t) for t in y], hyps)))
        return 1.0 - float(cer)
