import math

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from sal import autodiff as ad
from sal.mlp import MlpConfig, MlpParams, TapedMlp, forward, geometric_init, init_sphere_error, single_layer_init


class TestConfig:
    def test_standard_layout(self):
        cfg = MlpConfig.standard(3, 8, 512)
        assert cfg.hidden == (512, 512, 509, 512, 512, 512, 512)
        assert cfg.skip_layers == (3,)
        assert cfg.layer_input_widths() == [3, 512, 512, 512, 512, 512, 512]

    def test_latent_input_width(self):
        cfg = MlpConfig.standard(3, 8, 512, latent_dim=256)
        assert cfg.layer_input_widths()[0] == 259
        assert cfg.hidden[2] + 259 == 512

    def test_invalid(self):
        with pytest.raises(ValueError):
            MlpConfig(input_dim=4)
        with pytest.raises(ValueError):
            MlpConfig(hidden=(0, 3))
        with pytest.raises(ValueError):
            MlpConfig(hidden=(8, 8), skip_layers=(2,))

    def test_roundtrip_dict(self):
        cfg = MlpConfig.standard(2, 5, 64, latent_dim=4, phi="tanh_linear", gamma=0.3)
        assert MlpConfig.from_dict(cfg.to_dict()) == cfg


class TestGeometricInit:
    def test_head_and_biases(self):
        cfg = MlpConfig.standard(3, 8, 512)
        p = geometric_init(cfg, r=1.0)
        np.testing.assert_allclose(p.w, math.sqrt(math.pi) / math.sqrt(512))
        assert p.w[0] == pytest.approx(0.078325, abs=1e-5)
        assert p.b == -1.0
        assert all(np.all(b == 0) for b in p.biases)

    def test_weight_std(self):
        cfg = MlpConfig.standard(2, 4, 400)
        p = geometric_init(cfg, seed=3)
        W = p.weights[1]
        assert W.std() == pytest.approx(math.sqrt(2.0 / 400), rel=0.02)

    def test_latent_columns_zero(self):
        cfg = MlpConfig.standard(3, 8, 64, latent_dim=5)
        p = geometric_init(cfg)
        np.testing.assert_array_equal(p.weights[0][:, :5], 0.0)
        off = cfg.hidden[2]
        np.testing.assert_array_equal(p.weights[3][:, off:off + 5], 0.0)
        x = np.random.default_rng(0).uniform(-1, 1, (10, 3))
        np.testing.assert_array_equal(forward(p, cfg, x, np.zeros(5)), forward(p, cfg, x, np.ones(5)))

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            geometric_init(MlpConfig.standard(2, 3, 8), r=0.0)

    def test_single_layer_head(self):
        cfg, p = single_layer_init(3, 100, sigma=2.0)
        np.testing.assert_allclose(p.w, math.sqrt(2 * math.pi) / (2.0 * 100))

    def test_origin_value(self):
        cfg = MlpConfig.standard(2, 8, 512)
        p = geometric_init(cfg, r=0.8)
        # all hidden activations vanish at the origin
        assert forward(p, cfg, np.zeros(2)) == pytest.approx(-0.8)

    def test_wide_network_point_value(self):
        cfg = MlpConfig.standard(2, 8, 2000)
        p = geometric_init(cfg, r=1.0, seed=0)
        assert forward(p, cfg, np.array([2.0, 0.0])) == pytest.approx(1.0, abs=0.1)

    def test_rotation_invariance_in_distribution(self):
        # over seeds, f(x) and f(Rx) have the same distribution
        cfg = MlpConfig.standard(2, 4, 200)
        x = np.array([1.3, 0.4])
        R = special_ortho_group.rvs(2, random_state=1)
        a = np.array([forward(geometric_init(cfg, seed=s), cfg, x) for s in range(40)])
        b = np.array([forward(geometric_init(cfg, seed=s), cfg, R @ x) for s in range(40)])
        se = np.sqrt(a.var() / 40 + b.var() / 40)
        assert abs(a.mean() - b.mean()) < 4 * se

    def test_sphere_error_deterministic(self):
        cfg = MlpConfig.standard(2, 4, 64)
        p = geometric_init(cfg)
        assert init_sphere_error(p, cfg, 1.0, 500, seed=2) == init_sphere_error(p, cfg, 1.0, 500, seed=2)

    def test_star_shaped_zero_set(self):
        # one sign change along nearly every ray from the origin
        cfg = MlpConfig.standard(2, 8, 200)
        p = geometric_init(cfg, seed=0)
        th = np.linspace(0, 2 * np.pi, 360, endpoint=False)
        t = np.linspace(0, 3, 301)
        pts = (t[None, :, None] * np.stack([np.cos(th), np.sin(th)], 1)[:, None, :]).reshape(-1, 2)
        s = np.sign(forward(p, cfg, pts)).reshape(360, 301)
        changes = (np.diff(s, axis=1) != 0).sum(axis=1)
        assert np.mean(changes == 1) >= 0.95


class TestForward:
    def test_single_point_returns_float(self):
        cfg = MlpConfig.standard(3, 3, 16)
        assert isinstance(forward(geometric_init(cfg), cfg, np.zeros(3)), float)

    def test_dimension_mismatch(self):
        cfg = MlpConfig.standard(3, 3, 16)
        with pytest.raises(ValueError):
            forward(geometric_init(cfg), cfg, np.zeros((2, 2)))

    def test_latent_required(self):
        cfg = MlpConfig.standard(3, 3, 16, latent_dim=2)
        with pytest.raises(ValueError):
            forward(geometric_init(cfg), cfg, np.zeros((2, 3)))

    def test_taped_matches_numpy(self, rng):
        cfg = MlpConfig.standard(3, 6, 32, latent_dim=2, phi="tanh_linear", gamma=0.5)
        p = geometric_init(cfg, seed=1)
        p.biases = [rng.normal(0, 0.1, b.shape) for b in p.biases]
        x = rng.standard_normal((7, 3))
        z = rng.standard_normal(2)
        tape = ad.Tape()
        out = TapedMlp(tape, p, cfg)(x, z)
        np.testing.assert_allclose(out.data, forward(p, cfg, x, z), rtol=1e-13, atol=1e-14)

    def test_piecewise_linear(self, rng):
        cfg = MlpConfig.standard(2, 4, 32)
        p = geometric_init(cfg, seed=2)
        x1 = np.array([0.7, 0.2])
        x2 = x1 + 1e-7 * rng.standard_normal(2)
        a = 0.3
        lhs = forward(p, cfg, a * x1 + (1 - a) * x2)
        rhs = a * forward(p, cfg, x1) + (1 - a) * forward(p, cfg, x2)
        assert lhs == pytest.approx(rhs, abs=1e-13)

    def test_negated_params_negate_output(self, rng):
        cfg = MlpConfig.standard(2, 4, 16, phi="tanh_linear")
        p = geometric_init(cfg)
        x = rng.standard_normal((5, 2))
        np.testing.assert_allclose(forward(p.negated(), cfg, x), -forward(p, cfg, x))

    def test_params_dict_roundtrip(self):
        cfg = MlpConfig.standard(2, 4, 16)
        p = geometric_init(cfg)
        q = MlpParams.from_dict(p.as_dict())
        q.check(cfg)
        np.testing.assert_array_equal(q.weights[2], p.weights[2])
        assert q.b == p.b
