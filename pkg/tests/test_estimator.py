import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mmevit.estimator import EnsembleClassifier, IMUWindowizer, SkeletonHeatmapper
from mmevit.exceptions import ValidationError

TOY = dict(dim=8, heads=2, imu_depth=1, skel_depth=1, cnn_channels=(2, 2, 2, 2), window=8, stride=64, grid=8,
           frames=4, epochs=(1, 1, 1), lr=(1e-2, 1e-2, 1e-2), batch_size=(16, 8, 16), dtype="float64")


def test_windowizer(tiny_corpus):
    samples, _ = tiny_corpus
    w = IMUWindowizer(window=60, stride=30)
    with pytest.raises(NotFittedError):
        w.transform(samples[:1])
    out = w.fit_transform(samples[:3])
    assert [o.shape[0] for o in out] == [1 + (s.imu.T - 60) // 30 for s in samples[:3]]
    assert out[0].shape[1:] == (60, 4, 3) and w.stats_ is None
    corpus = IMUWindowizer(norm_scope="corpus").fit(samples)
    assert corpus.stats_ is not None
    with pytest.raises(ValidationError):
        IMUWindowizer(norm_scope="global").fit(samples)


def test_heatmapper(tiny_corpus):
    samples, _ = tiny_corpus
    vol = SkeletonHeatmapper(grid=8, frames=4).fit_transform(samples[:2])
    assert vol.shape == (2, 53, 4, 8, 8) and vol.dtype == np.float64


def test_params_and_clone():
    est = EnsembleClassifier(**TOY)
    params = est.get_params()
    assert params["dim"] == 8 and params["epochs"] == (1, 1, 1)
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(seed=3).seed == 3


def test_fit_predict_score(tiny_corpus):
    samples, _ = tiny_corpus
    est = EnsembleClassifier(**TOY)
    with pytest.raises(NotFittedError):
        est.predict(samples[:1])
    est.fit(samples, X_valid=samples[:4])
    assert est.classes_.tolist() == list(range(1, 10))
    assert len(est.records_) == 3 and "valid_acc" in est.records_[0].epochs[0]
    proba = est.predict_proba(samples[:5])
    assert proba.shape == (5, 9) and np.allclose(proba.sum(1), 1.0)
    pred = est.predict(samples[:5])
    assert set(pred.tolist()) <= set(range(1, 10))
    res = est.evaluate(samples[:5])
    assert res.accuracy == pytest.approx(est.score(samples[:5], [s.target for s in samples[:5]]))
    # a refit with the same params is bit-identical
    again = clone(est).fit(samples, X_valid=samples[:4])
    assert again.model_.digest() == est.model_.digest()


def test_custom_targets(tiny_corpus):
    samples, _ = tiny_corpus
    y = np.array([int(s.target) % 2 for s in samples])
    est = EnsembleClassifier(**TOY).fit(samples, y)
    assert est.classes_.tolist() == [0, 1]
    assert est.predict_proba(samples[:2]).shape == (2, 2)


def test_bad_params(tiny_corpus):
    samples, _ = tiny_corpus
    with pytest.raises(ValidationError):
        EnsembleClassifier(**{**TOY, "dtype": "float16"}).fit(samples)
    with pytest.raises(ValueError):
        EnsembleClassifier(**{**TOY, "epochs": (1, 1)}).fit(samples)
