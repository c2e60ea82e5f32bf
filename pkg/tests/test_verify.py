import json

import numpy as np

from sal import verify as V


class TestHelpers:
    def test_hausdorff(self):
        assert V.hausdorff_vertices(np.zeros((1, 2)), np.array([[3.0, 4.0]])) == 5.0
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert V.hausdorff_vertices(a, a[:1]) == 1.0

    def test_fibonacci_sphere(self):
        p = V._sphere(1000)
        np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0)
        np.testing.assert_allclose(p.mean(axis=0), 0.0, atol=2e-3)


class TestSuites:
    def test_gradcheck_small(self):
        rep = V.verify_gradcheck(n_trials=3, width=16, seed=5)
        assert rep["passed"] and rep["max_rel_err"] < 1e-5
        json.dumps(rep)

    def test_gradcheck_catches_wrong_step(self):
        # a huge step makes central differences inaccurate
        assert not V.verify_gradcheck(n_trials=2, h=1.0, width=16, seed=5)["passed"]

    def test_single_layer_small(self):
        rep = V.verify_single_layer(width=2000, tol=0.2)
        assert rep["passed"]

    def test_init_report_shape(self):
        rep = V.verify_init(widths=(16, 32), n_layers=3, seeds=range(2), n_samples=500)
        assert len(rep["median_mean_abs_err"]) == 2 and set(rep["per_seed"]) == {"16", "32"}
        json.dumps(rep)

    def test_contour_small(self):
        rep = V.verify_contour(resolutions=(32, 64), resolutions_3d=(16, 32))
        assert rep["passed"]
        assert all(r["closed"] for r in rep["2d"]) and all(r["watertight"] for r in rep["3d"])

    def test_plane_report(self):
        rep = V.verify_plane(n_samples=20_000, n_data=41)
        assert rep["sign_change"] and rep["alpha_star"] > 0
        assert abs(rep["mirror_bias_gradient"]) < 1e-12
        json.dumps(rep)
