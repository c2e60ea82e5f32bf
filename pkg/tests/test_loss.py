import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sal import autodiff as ad
from sal.loss import (
    LossConfig,
    latent_regularizer,
    mirror_bias_gradient,
    plane_critical_alpha,
    plane_gradient_samples,
    sal_loss,
    sal_loss_l0,
    sal_loss_l2,
    sample_latent,
    shape_space_loss,
    tau,
    tau_grad,
)
from sal.mlp import MlpConfig, MlpParams, TapedMlp, forward, geometric_init
from sal.sampling import KIND_SPLAT, KIND_SURFACE, SalSampleSet


def zero_net(dim=2, latent_dim=0):
    cfg = MlpConfig.standard(dim, 3, 8, latent_dim=latent_dim)
    p = geometric_init(cfg)
    p.w = np.zeros_like(p.w)
    p.b = 0.0
    return cfg, p


def loss_value(fn, p, cfg, batch, **kw):
    tape = ad.Tape()
    return float(fn(TapedMlp(tape, p, cfg), batch, **kw).data)


class TestTau:
    def test_examples(self):
        assert tau(0.5, 0.3) == pytest.approx(0.2)
        assert tau(-0.5, 0.3) == pytest.approx(0.2)
        assert tau(0.7, 0.7, 2.0) == 0.0

    def test_rejects_negative_target(self):
        with pytest.raises(ValueError):
            tau(1.0, -0.1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(ell=0.5)
        with pytest.raises(ValueError):
            LossConfig(variant="l1")

    @given(st.floats(-1e3, 1e3), st.floats(0, 1e3), st.sampled_from([1.0, 2.0]))
    def test_sign_agnostic(self, a, b, ell):
        assert tau(-a, b, ell) == tau(a, b, ell)

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_smooth_derivative_sign(self, a, b):
        g = tau_grad(a, b, 2.0)
        if a > 0:
            assert np.sign(g) == np.sign(a - b)
        assert tau_grad(b, b, 2.0) == 0.0

    def test_derivative_at_zero_is_right_derivative(self):
        # tau(a, 0.5, 2) = (|a| - 0.5)^2, slope -1 leaving a = 0 to the right
        assert tau_grad(0.0, 0.5, 2.0) == -1.0
        assert tau_grad(0.0, 0.5, 1.0) == -1.0
        assert tau_grad(0.0, 0.0, 2.0) == 0.0

    def test_grad_matches_finite_difference(self):
        for a, b, ell in [(0.8, 0.3, 1.0), (-0.8, 0.3, 2.0), (0.1, 0.5, 1.5)]:
            h = 1e-7
            fd = (tau(a + h, b, ell) - tau(a - h, b, ell)) / (2 * h)
            assert tau_grad(a, b, ell) == pytest.approx(fd, rel=1e-6)


class TestSalLossL2:
    def test_zero_network(self):
        cfg, p = zero_net()
        t = np.array([0.3, 0.5, 1.2])
        batch = SalSampleSet(np.ones((3, 2)), t, np.full(3, KIND_SPLAT))
        assert loss_value(sal_loss_l2, p, cfg, batch) == pytest.approx(t.mean())
        assert loss_value(sal_loss_l2, p, cfg, batch, ell=2.0) == pytest.approx(np.mean(t ** 2))

    def test_exact_signed_distance_gives_zero(self, rng):
        cfg, p = zero_net()
        z = rng.standard_normal((10, 2))
        f = forward(geometric_init(cfg, seed=3), cfg, z)
        batch = SalSampleSet(z, np.abs(f), np.full(10, KIND_SPLAT))
        assert loss_value(sal_loss_l2, geometric_init(cfg, seed=3), cfg, batch) == 0.0

    def test_sign_flip_invariance(self, rng):
        cfg = MlpConfig.standard(2, 4, 16)
        p = geometric_init(cfg, seed=1)
        z = rng.standard_normal((20, 2))
        batch = SalSampleSet(z, rng.uniform(0, 1, 20), rng.integers(0, 2, 20))
        for fn in (sal_loss_l2, sal_loss_l0):
            assert loss_value(fn, p, cfg, batch) == loss_value(fn, p.negated(), cfg, batch)

    def test_empty_batch(self):
        cfg, p = zero_net()
        with pytest.raises(ValueError):
            loss_value(sal_loss_l2, p, cfg, SalSampleSet(np.zeros((0, 2)), [], []))


class TestSalLossL0:
    def test_zero_network_gives_splat_fraction(self):
        cfg, p = zero_net()
        kind = np.array([KIND_SPLAT, KIND_SPLAT, KIND_SURFACE, KIND_SPLAT, KIND_SURFACE])
        batch = SalSampleSet(np.ones((5, 2)), np.full(5, 7.0), kind)
        assert loss_value(sal_loss_l0, p, cfg, batch) == pytest.approx(0.6)

    def test_indicator_gives_zero(self):
        # f(x) = relu(x_0): 0 on the surface samples, 1 at the splat samples
        cfg = MlpConfig(input_dim=2, hidden=(1,), skip_layers=())
        p = MlpParams([np.array([[1.0, 0.0]])], [np.array([0.0])], np.array([1.0]), 0.0)
        z = np.array([[0.0, 0.3], [1.0, -2.0], [1.0, 5.0], [-1.0, 0.0]])
        kind = np.array([KIND_SURFACE, KIND_SPLAT, KIND_SPLAT, KIND_SURFACE])
        assert loss_value(sal_loss_l0, p, cfg, SalSampleSet(z, np.zeros(4), kind)) == 0.0

    def test_targets_ignored(self, rng):
        cfg = MlpConfig.standard(2, 3, 8)
        p = geometric_init(cfg)
        z = rng.standard_normal((6, 2))
        kind = rng.integers(0, 2, 6)
        a = SalSampleSet(z, np.zeros(6), kind)
        b = SalSampleSet(z, np.full(6, 9.0), kind)
        assert loss_value(sal_loss_l0, p, cfg, a) == loss_value(sal_loss_l0, p, cfg, b)

    def test_dispatch(self, rng):
        cfg = MlpConfig.standard(2, 3, 8)
        p = geometric_init(cfg)
        batch = SalSampleSet(rng.standard_normal((6, 2)), rng.uniform(0, 1, 6), rng.integers(0, 2, 6))
        tape = ad.Tape()
        net = TapedMlp(tape, p, cfg)
        assert float(sal_loss(net, batch, LossConfig("l0")).data) == loss_value(sal_loss_l0, p, cfg, batch)


class TestShapeSpaceLoss:
    def test_regularizer_vanishes_at_prior(self):
        tape = ad.Tape()
        r = latent_regularizer(tape.constant(np.zeros(4)), tape.constant(-np.ones(4)), 1e-3)
        assert float(r.data) == 0.0

    def test_regularizer_value(self):
        tape = ad.Tape()
        r = latent_regularizer(tape.constant(np.array([1.0, -2.0])), tape.constant(np.array([0.0, -3.0])), 0.5)
        assert float(r.data) == pytest.approx(0.5 * 3 + 1 + 2)

    def test_default_lambda(self):
        assert LossConfig().lam == 1e-3

    def test_reparameterization(self):
        tape = ad.Tape()
        w = sample_latent(tape.constant(np.array([1.0])), tape.constant(np.array([np.log(4.0)])), np.array([0.5]))
        np.testing.assert_allclose(w.data, [2.0])

    def test_deterministic_mode_is_l2_at_mu(self, rng):
        cfg = MlpConfig.standard(2, 4, 16, latent_dim=3)
        p = geometric_init(cfg, seed=0)
        p.weights[0] = rng.standard_normal(p.weights[0].shape) * 0.3
        mu = rng.standard_normal(3)
        batch = SalSampleSet(rng.standard_normal((8, 2)), rng.uniform(0, 1, 8), np.full(8, KIND_SPLAT))
        tape = ad.Tape()
        net = TapedMlp(tape, p, cfg)
        total = shape_space_loss(net, batch, tape.parameter(mu, "mu"), tape.parameter(-np.ones(3), "eta"), lam=1e-3)
        tape2 = ad.Tape()
        l2 = sal_loss_l2(TapedMlp(tape2, p, cfg), batch, latent=mu)
        assert float(total.data) == pytest.approx(float(l2.data) + 1e-3 * np.abs(mu).sum(), rel=1e-14)
        g = ad.backward(tape, total)
        assert g["mu"].shape == (3,) and np.all(np.isfinite(g["eta"]))

    def test_requires_latent(self, rng):
        cfg, p = zero_net()
        tape = ad.Tape()
        with pytest.raises(ValueError):
            shape_space_loss(TapedMlp(tape, p, cfg), SalSampleSet(np.zeros((1, 2)), [0.0], [1]),
                             tape.constant(np.zeros(1)), tape.constant(np.zeros(1)))


class TestPlane:
    def test_one_dimensional_point(self):
        res = plane_critical_alpha(np.array([1.0]), 0.0, np.zeros((1, 1)), 0.5, n_samples=20_000, seed=1)
        assert res.success
        assert res.alpha_star == pytest.approx(1.0, abs=1e-9)
        assert res.grad_norm < 5 * res.grad_se + 1e-12

    def test_bias_gradient_small_for_any_alpha(self):
        t = np.linspace(-1, 1, 41)
        data = np.stack([t, np.zeros_like(t)], 1)
        res = plane_critical_alpha(np.array([0.0, 1.0]), 0.0, data, 0.3, n_samples=40_000, seed=2)
        assert abs(res.grad_b_any_alpha) < 0.02

    def test_mirror_pairs_cancel(self, rng):
        normal = np.array([0.6, 0.8])
        z = rng.standard_normal((1000, 2))
        h = lambda q: np.abs(q @ normal) + 0.1 * np.linalg.norm(q - np.outer(q @ normal, normal), axis=1)
        for alpha in (0.01, 1.0, 50.0):
            assert abs(mirror_bias_gradient(alpha, normal, 0.0, z, h)) < 1e-14

    def test_no_sign_change_reported(self):
        res = plane_critical_alpha(np.array([1.0]), 0.0, np.zeros((1, 1)), 0.5, n_samples=2000,
                                   interval=(1e-3, 1e-2), n_grid=5)
        assert not res.success
        assert res.g_lo < 0 and res.g_hi < 0

    def test_validation(self):
        with pytest.raises(ValueError):
            plane_critical_alpha(np.array([2.0]), 0.0, np.zeros((1, 1)), 0.5)
        with pytest.raises(ValueError):
            plane_critical_alpha(np.array([1.0]), 0.0, np.ones((1, 1)), 0.5)

    def test_gradient_samples_match_tape(self, rng):
        normal = np.array([0.0, 1.0])
        z = rng.standard_normal((50, 2))
        h = rng.uniform(0, 1, 50)
        per = plane_gradient_samples(0.7, normal, 0.2, z, h, ell=2.0)
        tape = ad.Tape()
        w = tape.parameter(0.7 * normal, "w")
        b = tape.parameter(0.7 * 0.2, "b")
        loss = ad.mean(ad.power(ad.abs_val(ad.sub(ad.abs_val(ad.linear(w, z, b)), tape.constant(h))), 2.0))
        g = ad.backward(tape, loss)
        np.testing.assert_allclose(per.mean(0), np.concatenate([g["w"], [g["b"]]]), rtol=1e-12)
