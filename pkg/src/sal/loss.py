"""Sign-agnostic losses.

``tau(a, b) = | |a| - b |^ell`` depends on the network value only through
``|a|``, so ``f`` and ``-f`` score the same.  The losses average ``tau`` over
a batch of :class:`~sal.sampling.SalSampleSet` samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import NearestIndex, PointCloud
from .mlp import TapedMlp
from .sampling import KIND_SPLAT, SalSampleSet

__all__ = [
    "LossConfig",
    "tau",
    "tau_grad",
    "tau_node",
    "sal_loss_l2",
    "sal_loss_l0",
    "sal_loss",
    "latent_regularizer",
    "shape_space_loss",
    "PlaneCriticalResult",
    "plane_critical_alpha",
    "plane_gradient_samples",
    "mirror_bias_gradient",
]


@dataclass(frozen=True)
class LossConfig:
    variant: str = "l2"
    ell: float = 1.0
    lam: float = 1e-3

    def __post_init__(self):
        if self.variant not in ("l2", "l0"):
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if not self.ell >= 1:
            raise ValueError(f"ell must be >= 1, got {self.ell}")


def tau(a, b, ell: float = 1.0):
    """Unsigned similarity ``||a| - b|^ell``."""
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0):
        raise ValueError("tau expects a nonnegative target")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    out = np.abs(np.abs(np.asarray(a, dtype=np.float64)) - b) ** ell
    return float(out) if out.ndim == 0 else out


def tau_grad(a, b, ell: float = 1.0):
    """``d tau / d a = ell ||a|-b|^(ell-1) sign(|a|-b) sign(a)``.

    At ``a = 0`` the derivative from the ``a >= 0`` side is returned, so on
    non-negative inputs it equals ``ell |a-b|^(ell-1) sign(a-b)``; it is zero
    where ``|a| = b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r = np.abs(a) - b
    mag = np.ones_like(r) if ell == 1 else ell * np.abs(r) ** (ell - 1)
    out = mag * np.sign(r) * np.where(a < 0, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def tau_node(f: ad.Tensor, target, ell: float = 1.0) -> ad.Tensor:
    """Per-sample ``tau`` recorded on the tape of ``f``."""
    t = ad.abs_val(ad.sub(ad.abs_val(f), target))
    return ad.power(t, ell) if ell != 1 else t


def sal_loss_l2(net: TapedMlp, batch: SalSampleSet, ell: float = 1.0, latent=None) -> ad.Tensor:
    """Mean of ``||f(z)| - h2(z)|^ell`` over the batch."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    f = net(batch.z, latent)
    return ad.mean(tau_node(f, net.tape.constant(batch.target), ell))


def sal_loss_l0(net: TapedMlp, batch: SalSampleSet, ell: float = 1.0, latent=None) -> ad.Tensor:
    """Splat term ``||f(z)| - 1|^ell`` plus surface term ``|f(x)|^ell``.

    Both expectations are taken over the whole batch, so each term is
    weighted by the fraction of the batch of its kind.  Stored targets are
    not read: the sample kind is the distance.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    h0 = batch.kind.astype(np.float64)
    f = net(batch.z, latent)
    return ad.mean(tau_node(f, net.tape.constant(h0), ell))


def sal_loss(net: TapedMlp, batch: SalSampleSet, cfg: LossConfig, latent=None) -> ad.Tensor:
    if cfg.variant == "l2":
        return sal_loss_l2(net, batch, cfg.ell, latent)
    return sal_loss_l0(net, batch, cfg.ell, latent)


def latent_regularizer(mu: ad.Tensor, eta: ad.Tensor, lam: float) -> ad.Tensor:
    """``lam ||mu||_1 + ||eta + 1||_1``."""
    return ad.add(
        ad.scale(ad.sum_all(ad.abs_val(mu)), lam),
        ad.sum_all(ad.abs_val(ad.add(eta, 1.0))),
    )


def sample_latent(mu: ad.Tensor, eta: ad.Tensor, eps) -> ad.Tensor:
    """Reparameterized draw ``mu + exp(eta / 2) * eps``."""
    return ad.add(mu, ad.mul(ad.exp(ad.scale(eta, 0.5)), eps))


def shape_space_loss(net: TapedMlp, batch: SalSampleSet, mu: ad.Tensor, eta: ad.Tensor, lam: float = 1e-3, ell: float = 1.0, eps=None) -> ad.Tensor:
    """``loss_R + lam ||mu||_1 + ||eta + 1||_1`` for one shape.

    ``eps`` is the standard normal draw for the latent; ``None`` means the
    deterministic mode (``eps = 0``), where the latent is ``mu``.
    """
    if net.cfg.latent_dim == 0:
        raise ValueError("shape-space loss needs a latent-conditioned network")
    tape = net.tape
    if eps is None:
        eps = np.zeros(mu.shape)
    w = sample_latent(mu, eta, tape.constant(eps))
    loss_r = sal_loss_l2(net, batch, ell, latent=w)
    return ad.add(loss_r, latent_regularizer(mu, eta, lam))


# ---------------------------------------------------------------------------
# plane reproduction for the linear model f(x) = phi(w.x + b)


@dataclass
class PlaneCriticalResult:
    success: bool
    alpha_star: float
    grad_norm: float
    grad: np.ndarray
    grad_se: float
    grad_b_any_alpha: float
    g_lo: float
    g_hi: float
    bracket: tuple
    n_bisect: int
    g_grid: dict = field(default_factory=dict, repr=False)


def _plane_samples(rng, data, sigma, n):
    base = data[rng.integers(len(data), size=n)]
    return base + sigma * rng.standard_normal(base.shape)


def _plane_terms(alpha, gamma_z, h, kind, variant, ell, phi, phi_gamma):
    a = alpha * gamma_z
    fval = ad.strong_nonlinearity_value(a, phi, phi_gamma)
    target = h if variant == "l2" else kind.astype(np.float64)
    dtau = tau_grad(fval, target, ell)
    dphi = ad.strong_nonlinearity_derivative(a, phi, phi_gamma)
    return dtau * dphi


def plane_gradient_samples(alpha, normal, offset, z, h, kind=None, variant="l2", ell=1.0, phi="identity", phi_gamma=0.0):
    """Per-sample gradient of ``tau`` w.r.t. ``(w, b)`` at ``(alpha n, alpha c)``."""
    gz = z @ normal + offset
    if kind is None:
        kind = np.full(len(z), KIND_SPLAT, dtype=np.uint8)
    s = _plane_terms(alpha, gz, h, kind, variant, ell, phi, phi_gamma)
    return np.concatenate([s[:, None] * z, s[:, None]], axis=1)


def _G(alpha, gz, h, kind, variant, ell, phi, phi_gamma):
    # integrand of the scalar factor of grad_w over the positive half-space
    pos = gz >= 0
    s = _plane_terms(alpha, gz[pos], h[pos], kind[pos], variant, ell, phi, phi_gamma)
    return float(np.sum(s * gz[pos]) / len(gz))


def _linear_model_grad(alpha, normal, offset, z, h, kind, variant, ell, phi, phi_gamma):
    tape = ad.Tape()
    w = tape.parameter(alpha * normal, "w")
    b = tape.parameter(alpha * offset, "b")
    f = ad.strong_nonlinearity(ad.linear(w, z, b), phi, phi_gamma)
    target = h if variant == "l2" else kind.astype(np.float64)
    loss = ad.mean(tau_node(f, tape.constant(target), ell))
    g = ad.backward(tape, loss)
    return np.concatenate([g["w"], np.atleast_1d(g["b"])])


def plane_critical_alpha(
    normal,
    offset: float,
    data,
    sigma: float,
    n_samples: int = 1_000_000,
    variant: str = "l2",
    ell: float = 1.0,
    phi: str = "identity",
    phi_gamma: float = 0.0,
    seed: int = 0,
    interval=(1e-3, 1e3),
    n_grid: int = 61,
    max_bisect: int = 100,
    n_blocks: int = 1000,
    n_boot: int = 500,
) -> PlaneCriticalResult:
    """Locate the scale ``alpha`` at which ``(alpha n, alpha c)`` is critical.

    Samples ``z ~ N_sigma(X)`` with ``X`` the given points on the plane.  The
    scalar ``G(alpha)`` (the ``w``-gradient factor restricted to the positive
    side) is evaluated with common random numbers on a log grid over
    ``interval``; the first sign change is bisected in log space.  The full
    gradient at the root is then computed by reverse mode on an independent
    held-out sample, and its Monte Carlo standard error by a block bootstrap.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if not np.isclose(np.linalg.norm(normal), 1.0, atol=1e-12):
        raise ValueError("plane normal must have unit length")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(normal):
        raise ValueError("data must be N x d with d = len(normal)")
    if np.max(np.abs(data @ normal + offset)) > 1e-9:
        raise ValueError("data does not lie on the plane")
    rng = np.random.default_rng(seed)
    index = NearestIndex(PointCloud(data)) if data.shape[1] in (2, 3) else None

    def draw(n):
        z = _plane_samples(rng, data, sigma, n)
        h = index.nearest(z)[0] if index is not None else np.min(np.linalg.norm(z[:, None] - data[None], axis=-1), axis=1)
        return z, h, np.full(n, KIND_SPLAT, dtype=np.uint8)

    z, h, kind = draw(n_samples)
    gz = z @ normal + offset
    args = (gz, h, kind, variant, ell, phi, phi_gamma)

    lo, hi = interval
    grid = np.geomspace(lo, hi, n_grid)
    gvals = np.array([_G(a, *args) for a in grid])
    g_lo, g_hi = float(gvals[0]), float(gvals[-1])

    z_ho, h_ho, kind_ho = draw(n_samples)
    grad_b_any = float(_linear_model_grad(lo, normal, offset, z_ho, h_ho, kind_ho, variant, ell, phi, phi_gamma)[-1])

    sign_change = np.flatnonzero((gvals[:-1] < 0) & (gvals[1:] >= 0))
    if len(sign_change) == 0:
        return PlaneCriticalResult(False, float("nan"), float("nan"), np.full(len(normal) + 1, np.nan), float("nan"), grad_b_any, g_lo, g_hi, interval, 0, dict(zip(grid, gvals)))
    i = sign_change[0]
    a_lo, a_hi = grid[i], grid[i + 1]
    steps = 0
    if gvals[i + 1] == 0:
        # exact root on the grid
        a_lo = a_hi
    while a_hi / a_lo - 1 >= 1e-12 and steps < max_bisect:
        steps += 1
        mid = np.sqrt(a_lo * a_hi)
        if _G(mid, *args) < 0:
            a_lo = mid
        else:
            a_hi = mid
    alpha = float(np.sqrt(a_lo * a_hi))

    grad = _linear_model_grad(alpha, normal, offset, z_ho, h_ho, kind_ho, variant, ell, phi, phi_gamma)
    per = plane_gradient_samples(alpha, normal, offset, z_ho, h_ho, kind_ho, variant, ell, phi, phi_gamma)
    blocks = per[: (len(per) // n_blocks) * n_blocks].reshape(n_blocks, -1, per.shape[1]).mean(axis=1)
    boot = blocks[rng.integers(n_blocks, size=(n_boot, n_blocks))].mean(axis=1)
    se = float(np.sqrt(np.sum(boot.var(axis=0, ddof=1))))
    return PlaneCriticalResult(
        True, alpha, float(np.linalg.norm(grad)), grad, se, grad_b_any, g_lo, g_hi, (float(grid[i]), float(grid[i + 1])), steps, dict(zip(grid, gvals))
    )


def mirror_bias_gradient(alpha, normal, offset, z, h_fn, variant="l2", ell=1.0, phi="identity", phi_gamma=0.0):
    """``b``-gradient estimate over explicit mirror pairs ``(z, r(z))``.

    ``r`` reflects across the plane; the per-pair contributions cancel
    exactly when ``h`` is reflection invariant.
    """
    normal = np.asarray(normal, dtype=np.float64)
    gz = z @ normal + offset
    rz = z - 2.0 * gz[:, None] * normal[None, :]
    both = np.concatenate([z, rz])
    h = h_fn(both)
    kind = np.full(len(both), KIND_SPLAT, dtype=np.uint8)
    per = plane_gradient_samples(alpha, normal, offset, both, h, kind, variant, ell, phi, phi_gamma)
    n = len(z)
    return float(np.sum(per[:n, -1] + per[n:, -1]) / len(both))
