"""Numerical verification suites; each returns a JSON-serializable report with ``passed``."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .contouring import boundary_edges, evaluate_grid, marching_cubes, marching_squares
from .geometry import NearestIndex, PointCloud
from .loss import mirror_bias_gradient, plane_critical_alpha, tau_node
from .mlp import MlpConfig, MlpParams, TapedMlp, forward, geometric_init, init_sphere_error, single_layer_init

__all__ = [
    "verify_init",
    "verify_single_layer",
    "verify_plane",
    "verify_gradcheck",
    "verify_contour",
    "hausdorff_vertices",
]


def verify_init(widths=(100, 200, 2000), radius: float = 1.0, dim: int = 2, n_layers: int = 8, seeds=range(5),
                n_samples: int = 10_000, box=(-2.0, 2.0), threshold: float = 0.1) -> dict:
    """Initial-sphere error versus width: median over seeds must fall strictly with width."""
    medians, per_seed = [], {}
    for w in widths:
        cfg = MlpConfig.standard(dim, n_layers, w)
        errs = []
        for s in seeds:
            p = geometric_init(cfg, radius, seed=s)
            errs.append(init_sphere_error(p, cfg, radius, n_samples, box, seed=100 + s)["mean_abs_err"])
        per_seed[str(w)] = errs
        medians.append(float(np.median(errs)))
    decreasing = bool(all(a > b for a, b in zip(medians, medians[1:])))
    widest = medians[-1] / radius < threshold
    return {
        "suite": "init",
        "widths": list(widths),
        "median_mean_abs_err": medians,
        "per_seed": per_seed,
        "strictly_decreasing": decreasing,
        "widest_below_threshold": bool(widest),
        "passed": bool(decreasing and widest),
    }


def verify_single_layer(width: int = 10_000, sigma: float = 1.0, radius: float = 1.0, dim: int = 3,
                        n_points: int = 100, norm_range=(0.5, 2.0), tol: float = 0.05, seed: int = 0) -> dict:
    cfg, params = single_layer_init(dim, width, sigma, radius, seed)
    rng = np.random.default_rng(seed + 1)
    d = rng.standard_normal((n_points, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * rng.uniform(*norm_range, size=(n_points, 1))
    err = np.abs(forward(params, cfg, x) - (np.linalg.norm(x, axis=1) - radius))
    return {"suite": "single_layer", "max_abs_err": float(err.max()), "mean_abs_err": float(err.mean()),
            "tol": tol, "passed": bool(err.max() < tol)}


def verify_plane(dim: int = 2, sigma: float = 0.3, n_samples: int = 1_000_000, n_data: int = 201, extent: float = 1.0,
                 ell: float = 1.0, factor: float = 5.0, mirror_tol: float = 1e-12, seed: int = 0) -> dict:
    """Critical scale of the plane ``x_d = 0`` for the linear model ``w.x + b``."""
    normal = np.zeros(dim)
    normal[-1] = 1.0
    t = np.linspace(-extent, extent, n_data)
    if dim == 2:
        data = np.stack([t, np.zeros_like(t)], 1)
    else:
        u, v = np.meshgrid(t[:: max(1, n_data // 41)], t[:: max(1, n_data // 41)])
        data = np.stack([u.ravel(), v.ravel(), np.zeros(u.size)], 1)
    res = plane_critical_alpha(normal, 0.0, data, sigma, n_samples, "l2", ell, seed=seed)
    index = NearestIndex(PointCloud(data))
    z = data[np.random.default_rng(seed + 7).integers(len(data), size=100_000)]
    z = z + sigma * np.random.default_rng(seed + 8).standard_normal(z.shape)
    alpha = res.alpha_star if res.success else 1.0
    mirror = mirror_bias_gradient(alpha, normal, 0.0, z, lambda q: index.nearest(q)[0], "l2", ell)
    ok_grad = res.success and res.grad_norm < factor * res.grad_se
    return {
        "suite": "plane",
        "sign_change": res.success,
        "alpha_star": res.alpha_star,
        "bracket": list(res.bracket),
        "G_endpoints": [res.g_lo, res.g_hi],
        "grad_norm": res.grad_norm,
        "grad_se": res.grad_se,
        "grad_norm_over_se": res.grad_norm / res.grad_se if res.success and res.grad_se > 0 else None,
        "mirror_bias_gradient": mirror,
        "passed": bool(ok_grad and abs(mirror) < mirror_tol),
    }


def _random_params(cfg: MlpConfig, rng) -> MlpParams:
    p = geometric_init(cfg, rng.uniform(0.5, 1.5), seed=int(rng.integers(2**31)))
    # nonzero biases and a perturbed head exercise every gradient path
    p.biases = [rng.normal(0, 0.1, b.shape) for b in p.biases]
    p.w = p.w + rng.normal(0, 0.05, p.w.shape)
    return p


def _preactivations(params, cfg, x):
    """Hidden preactivations and the output for a batch ``x``."""
    pres = []
    y = x
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        if i in cfg.skip_layers:
            y = np.concatenate([y, x], axis=-1) / math.sqrt(2.0)
        a = y @ W.T + b
        pres.append(a)
        y = np.maximum(a, 0.0)
    return pres, ad.strong_nonlinearity_value(y @ params.w + params.b, cfg.phi, cfg.gamma)


def verify_gradcheck(n_trials: int = 100, h: float = 1e-5, tol: float = 1e-5, dim: int = 3, n_layers: int = 8,
                     width: int = 64, batch: int = 4, n_dirs: int = 8, n_coords: int = 16, ell: float = 1.0,
                     margin: float = 1e-3, seed: int = 0) -> dict:
    """Reverse mode against central differences for the full network plus ``tau`` loss.

    Each trial draws parameters, points and targets, rejecting draws with any
    kink argument (hidden preactivation, ``f``, ``|f| - target``) closer than
    ``margin`` to zero.  Derivatives are compared along random unit
    directions and along random coordinate axes; the trial error is
    ``max |fd - ad| / max |ad|`` over those directions.
    """
    rng = np.random.default_rng(seed)
    cfg = MlpConfig.standard(dim, n_layers, width)
    errors, rejected = [], 0
    while len(errors) < n_trials:
        params = _random_params(cfg, rng)
        x = rng.uniform(-1.5, 1.5, size=(batch, dim))
        target = rng.uniform(0.0, 1.0, size=batch)
        pres, f = _preactivations(params, cfg, x)
        kinks = np.concatenate([np.abs(a).ravel() for a in pres] + [np.abs(f), np.abs(np.abs(f) - target)])
        if kinks.min() < margin:
            rejected += 1
            continue
        tape = ad.Tape()
        net = TapedMlp(tape, params, cfg)
        loss = ad.mean(tau_node(net(x), tape.constant(target), ell))
        g = ad.backward(tape, loss)
        names = list(g)
        flat_g = np.concatenate([np.ravel(g[n]) for n in names])
        theta = params.as_dict()
        sizes = [np.size(theta[n]) for n in names]
        flat_t = np.concatenate([np.ravel(theta[n]) for n in names])

        def unflatten(v):
            out, o = {}, 0
            for n, s in zip(names, sizes):
                out[n] = v[o:o + s].reshape(np.shape(theta[n]))
                o += s
            return MlpParams.from_dict(out)

        def value(v):
            p = unflatten(v)
            fv = forward(p, cfg, x)
            return float(np.mean(np.abs(np.abs(fv) - target) ** ell))

        dirs = rng.standard_normal((n_dirs, len(flat_t)))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        eye = np.zeros((n_coords, len(flat_t)))
        eye[np.arange(n_coords), rng.choice(len(flat_t), n_coords, replace=False)] = 1.0
        V = np.concatenate([dirs, eye])
        fd = np.array([(value(flat_t + h * v) - value(flat_t - h * v)) / (2 * h) for v in V])
        an = V @ flat_g
        errors.append(float(np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1e-300)))
    worst = float(max(errors))
    return {"suite": "gradcheck", "n_trials": n_trials, "rejected_draws": rejected, "h": h,
            "max_rel_err": worst, "median_rel_err": float(np.median(errors)), "tol": tol, "passed": worst < tol}


def hausdorff_vertices(vertices: np.ndarray, truth: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    d1 = NearestIndex(PointCloud(truth)).nearest(vertices)[0].max()
    d2 = NearestIndex(PointCloud(vertices)).nearest(truth)[0].max()
    return float(max(d1, d2))


def _circle(n):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.stack([np.cos(t), np.sin(t)], 1)


def _sphere(n):
    # Fibonacci lattice: near-uniform and deterministic
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], 1)


def verify_contour(resolutions=(32, 64, 128), resolutions_3d=(16, 32, 64), box: float = 2.0,
                   ratio_tol: float = 0.25) -> dict:
    """Analytic circle and sphere fields: vertex accuracy, convergence and topology."""
    field = lambda x: np.linalg.norm(x, axis=1) - 1.0
    report = {"suite": "contour", "2d": [], "3d": []}
    ok = True
    truth2 = _circle(200_000)
    for res in resolutions:
        g = evaluate_grid(field, ([-box] * 2, [box] * 2), res)
        p = marching_squares(g, 0.0, field)
        err = float(np.abs(np.linalg.norm(p.vertices, axis=1) - 1).max())
        closed = bool(np.all(p.degrees() == 2))
        entry = {"resolution": res, "max_vertex_err": err, "cell_diagonal": g.cell_diagonal,
                 "hausdorff": hausdorff_vertices(p.vertices, truth2), "closed": closed}
        ok &= err < g.cell_diagonal and closed
        report["2d"].append(entry)
    truth3 = _sphere(400_000)
    for res in resolutions_3d:
        g = evaluate_grid(field, ([-box] * 3, [box] * 3), res)
        m = marching_cubes(g)
        err = float(np.abs(np.linalg.norm(m.vertices, axis=1) - 1).max())
        tight = len(boundary_edges(m)) == 0
        entry = {"resolution": res, "max_vertex_err": err, "cell_diagonal": g.cell_diagonal,
                 "hausdorff": hausdorff_vertices(m.vertices, truth3), "watertight": bool(tight)}
        ok &= err < g.cell_diagonal and tight
        report["3d"].append(entry)
    for key in ("2d", "3d"):
        rows = report[key]
        ratios = [a["hausdorff"] / b["hausdorff"] for a, b in zip(rows, rows[1:])]
        report[key + "_halving_ratios"] = ratios
        # doubling the resolution should halve the error (ratio 2 +- 25%)
        ok &= all(abs(r / 2.0 - 1.0) <= ratio_tol for r in ratios)
    report["passed"] = bool(ok)
    return report
