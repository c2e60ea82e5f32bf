import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sal.contouring import Mesh, Polyline
from sal.estimator import SALReconstructor, SALShapeSpace, check_points

TINY = dict(n_layers=3, width=32, knn_k=3, epochs=20, lr=1e-3, batch_size=500)


def blob(scale=1.0, shift=(0.0, 0.0)):
    t = np.linspace(0, 2 * np.pi, 9)[:-1]
    return scale * np.stack([np.cos(t) * (1 + 0.25 * np.cos(2 * t)), 0.8 * np.sin(t)], 1) + np.asarray(shift)


class TestValidation:
    def test_check_points(self):
        assert check_points([[0, 1], [2, 3]]).dtype == np.float64
        with pytest.raises(ValueError):
            check_points([[0, np.inf]])
        with pytest.raises(ValueError):
            check_points(np.zeros((3, 4)))
        with pytest.raises(ValueError):
            check_points(np.zeros(3))

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            SALReconstructor().decision_function(np.zeros((1, 2)))

    def test_params_and_clone(self):
        est = SALReconstructor(loss="l0", width=64, snapshot_epochs=(5,))
        assert est.get_params()["loss"] == "l0"
        c = clone(est)
        assert c.get_params() == est.get_params()
        assert clone(SALShapeSpace(latent_dim=4)).latent_dim == 4


@pytest.fixture(scope="module")
def fitted():
    return SALReconstructor(loss="l0", **TINY).fit(blob())


class TestReconstructor:
    def test_attributes(self, fitted):
        assert fitted.n_features_in_ == 2
        assert fitted.sampler_config_.samples_per_point == 250  # ceil(2000 / 8)
        assert len(fitted.loss_trace_) == 20
        assert fitted.loss_trace_[-1][1] < fitted.initial_loss_
        assert fitted.init_radius_ == pytest.approx(np.mean(np.linalg.norm((blob() - fitted.center_) / fitted.scale_, axis=1)))

    def test_field_in_input_units(self, fitted):
        # a scaled and shifted copy trains identically in normalized units
        moved = SALReconstructor(loss="l0", **TINY).fit(blob(3.0, (5.0, -1.0)))
        x = np.array([[0.2, 0.1], [1.5, 0.0]])
        np.testing.assert_allclose(moved.decision_function(3.0 * x + [5.0, -1.0]), 3.0 * fitted.decision_function(x),
                                   rtol=1e-9, atol=1e-12)

    def test_predict_is_sign(self, fitted):
        x = np.array([[0.0, 0.0], [3.0, 3.0]])
        np.testing.assert_array_equal(fitted.predict(x), np.sign(fitted.decision_function(x)))

    def test_dimension_checked(self, fitted):
        with pytest.raises(ValueError):
            fitted.decision_function(np.zeros((2, 3)))

    def test_extract_surface(self, fitted):
        p = fitted.extract_surface(resolution=32)
        assert isinstance(p, Polyline)
        g = fitted.evaluate_grid(resolution=16)
        assert g.values.shape == (16, 16)

    def test_snapshots(self):
        est = SALReconstructor(**{**TINY, "epochs": 4}, snapshot_epochs=(2,)).fit(blob())
        assert list(est.snapshots_) == [2]
        x = np.array([[0.3, 0.3]])
        assert est.decision_function(x, params=est.snapshots_[2]).shape == (1,)

    def test_3d_mesh(self, rng):
        X = rng.standard_normal((200, 3))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        est = SALReconstructor(loss="l2", **{**TINY, "epochs": 2}).fit(X)
        assert isinstance(est.extract_surface(resolution=16), Mesh)


class TestShapeSpace:
    def test_fit_transform_decode(self):
        t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
        circles = [r * np.stack([np.cos(t), np.sin(t)], 1) for r in (0.5, 0.8)]
        ss = SALShapeSpace(latent_dim=2, n_layers=3, width=32, epochs=5, batch_size=2, points_per_shape=50, knn_k=3,
                           fit_iters=5)
        ss.fit(circles, y=["small", "big"])
        assert ss.table_.ids == ["small", "big"]
        z = ss.transform([circles[0]])
        assert z.shape == (1, 2)
        assert ss.decision_function(np.zeros((3, 2)), z[0]).shape == (3,)
        assert isinstance(ss.decode(z[0], resolution=16), Polyline)

    def test_rejects_single_array(self):
        with pytest.raises(TypeError):
            SALShapeSpace().fit(np.zeros((5, 2)))
