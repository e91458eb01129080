import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tfhtr.errors import InputError, VocabularyError
from tfhtr.estimator import HTRRecognizer, check_line_images
from tfhtr.synth.corpus import synthesize

TEXTS = ["dear", "to me", "a lot", "hint"]


def tiny(**kw):
    return HTRRecognizer(feature_size=16, encoder_blocks=1, decoder_blocks=1, cnn_channels=(4, 8, 8),
                         max_length=12, max_epochs=2, batch_size=2, **kw)


def test_params_round_trip_through_clone():
    est = tiny(seed=5)
    params = est.get_params()
    assert params["seed"] == 5 and params["feature_size"] == 16
    assert clone(est).get_params() == params
    assert est.set_params(heads=4).heads == 4


def test_fit_predict_score():
    images = [synthesize(t, k).pixels for k, t in enumerate(TEXTS)]
    est = tiny().fit(images, TEXTS)
    assert len(est.history_) == 2
    preds = est.predict(images)
    assert len(preds) == 4 and all(isinstance(p, str) for p in preds)
    s = est.score(images, TEXTS)
    assert s <= 1.0


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        tiny().predict([np.full((64, 20), 255, np.uint8)])


def test_input_validation():
    with pytest.raises(InputError):
        check_line_images(np.zeros((64, 10)))
    with pytest.raises(InputError):
        check_line_images([np.zeros((64, 0))])
    with pytest.raises(InputError):
        check_line_images([np.full((64, 10), np.nan)])
    out = check_line_images([np.full((32, 10), 255.0)])
    assert out[0].shape == (64, 20) and out[0].dtype == np.uint8
    img = [np.full((64, 20), 255, np.uint8)]
    with pytest.raises(InputError):
        tiny().fit(img, ["a", "b"])
    with pytest.raises(VocabularyError):
        tiny().fit(img, ["XYZ"])
