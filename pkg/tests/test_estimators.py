import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from radistill.estimators import DistillationRegressor, RadianceFieldRegressor, check_points, check_rays
from radistill.fields import OutOfBoundsError
from radistill.gradcheck import tiny_config
from radistill.renderer import RenderConfig, image_rays, orbit_cameras, render_rays_batched
from radistill.scenes import get_scene


def _ray_data(n_views=2, size=10):
    sc = get_scene("sphere")
    o, d = zip(*[image_rays(c) for c in orbit_cameras(n_views, width=size, height=size, seed=0)])
    o, d = np.concatenate(o), np.concatenate(d)
    y = render_rays_batched(sc, o, d, RenderConfig(n_samples=64))["rgb"]
    return np.hstack([o, d]), y


def test_check_rays_and_points():
    o, d = check_rays([[0, 0, 4, 0, 0, -2]])
    np.testing.assert_allclose(d, [[0, 0, -1]])
    with pytest.raises(ValueError):
        check_rays(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        check_rays(np.zeros((1, 6)))
    x, d = check_points(np.zeros((3, 3)))
    np.testing.assert_array_equal(d, np.tile([0, 0, 1.0], (3, 1)))
    with pytest.raises(OutOfBoundsError):
        check_points([[0, 0, 1.5]])
    with pytest.raises(ValueError):
        check_points(np.zeros((2, 4)))


def test_fit_predict_score():
    X, y = _ray_data()
    est = RadianceFieldRegressor(arch="grid", steps=40, batch_rays=128, n_samples=32,
                                 config=tiny_config("grid"))
    with pytest.raises(NotFittedError):
        est.predict(X)
    est.fit(X, y)
    pred = est.predict(X)
    assert pred.shape == y.shape
    assert est.score(X, y) > 10
    feats = est.transform(np.zeros((4, 3)))
    assert feats.shape == (4, est.field_.feature_dim)
    assert len(est.report_.records) == 40
    again = clone(est).fit(X, y)
    np.testing.assert_array_equal(again.predict(X), pred)
    with pytest.raises(ValueError):
        RadianceFieldRegressor().fit(X, y[:, :2])


def test_get_params_roundtrip():
    est = RadianceFieldRegressor(arch="vm", steps=5)
    params = est.get_params()
    assert params["arch"] == "vm" and params["steps"] == 5
    assert clone(est).get_params() == params


def test_distillation_regressor():
    X, y = _ray_data(1, 8)
    teacher = RadianceFieldRegressor(arch="hash", steps=5, batch_rays=64, n_samples=16,
                                     config=tiny_config("hash")).fit(X, y).field_
    before = teacher.params.values.tobytes()
    est = DistillationRegressor(teacher, student="vm", total_steps=4, stage_steps=(1, 1), batch_rays=16,
                                batch_points=64, n_samples=8, student_config=tiny_config("vm"))
    est.fit()
    assert teacher.params.values.tobytes() == before
    assert est.predict(X).shape == y.shape
    assert est.distill_config().clip is not None
    est.set_params(sigma_clip=None)
    assert est.distill_config().clip is None
    with pytest.raises(ValueError):
        DistillationRegressor(None).fit()
