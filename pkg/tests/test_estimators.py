import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import scene
from smallobj.augmentor import STRATEGIES, Pools, augment_image
from smallobj.det_eval import Detection
from smallobj.estimators import CopyPasteOversampler, ResidualGAN, SizeSplitter, SizeStratifiedAP
from smallobj.exceptions import ValidationError
from smallobj.patch_pool import build_voc_pool
from smallobj.voc_io import BoundingBox, SizeClass, split_by_size


def _data():
    a, ia = scene("a", 100, 100, [("car", (0, 0, 9, 9)), ("car", (30, 30, 99, 99))])
    b, ib = scene("b", 80, 60, [("bird", (5, 5, 14, 14))])
    return [a, b], {"a": ia, "b": ib}


def test_params_round_trip_and_clone():
    est = CopyPasteOversampler(strategy=3, seed=7, max_attempts=10)
    assert est.get_params() == {
        "strategy": 3, "seed": 7, "max_attempts": 10, "pool_size": None, "generated_pool": None}
    twin = clone(est).set_params(seed=8)
    assert twin.seed == 8 and est.seed == 7
    assert clone(ResidualGAN(iterations=5)).get_params()["iterations"] == 5


def test_size_splitter_matches_function():
    anns, _ = _data()
    out = SizeSplitter("big").fit_transform(anns)
    assert out == split_by_size(anns, SizeClass.BIG)
    with pytest.raises(NotFittedError):
        SizeSplitter().transform(anns)
    with pytest.raises(ValidationError):
        SizeSplitter().fit().transform(["not an annotation"])


def test_oversampler_equals_functional_pipeline():
    anns, images = _data()
    samples = CopyPasteOversampler(strategy=2, seed=3).fit_resample(anns, images)
    pools = build_voc_pool(anns, images)
    expected = [s for ann in anns for s in augment_image(images[ann.image_id], ann, STRATEGIES[2], Pools(pools), 3)]
    assert [s.image.tobytes() for s in samples] == [s.image.tobytes() for s in expected]
    assert len(samples) == 10


def test_oversampler_not_fitted():
    anns, images = _data()
    with pytest.raises(NotFittedError):
        CopyPasteOversampler().resample(anns, images)


def test_ap_estimator_score():
    anns, _ = _data()
    dets = [Detection("a", "car", 0.9, BoundingBox(0, 0, 9, 9)), Detection("b", "bird", 0.8, BoundingBox(5, 5, 14, 14))]
    scorer = SizeStratifiedAP(size="small").fit(anns)
    assert scorer.score(dets) == 1.0
    assert scorer.evaluate(dets[:1]).per_class["bird"].ap == 0.0


def test_residual_gan_estimator():
    rng = np.random.default_rng(0)
    small = rng.normal(size=(300, 2))
    large = rng.normal(size=(300, 2)) + [1.0, -1.0]
    gan = ResidualGAN(iterations=1500).fit(small, large)
    shifted = gan.transform(small)
    assert shifted.shape == small.shape
    assert np.allclose(shifted.mean(axis=0), large.mean(axis=0), atol=0.15)
    proba = gan.predict_proba(large)
    assert proba.shape == (300, 2) and np.allclose(proba.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        gan.residual(np.zeros((2, 3)))
    with pytest.raises(NotFittedError):
        ResidualGAN().transform(small)
    with pytest.raises(ValueError):
        ResidualGAN().fit(small, large[:, :1])
