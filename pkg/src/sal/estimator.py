"""scikit-learn style estimators for surface reconstruction and shape spaces."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .contouring import default_bounds, evaluate_grid, extract_zero_set
from .geometry import PointCloud, TriangleSoup
from .loss import LossConfig
from .mlp import MlpConfig, forward
from .sampling import SalSampleSet, SamplerConfig, build_training_set
from .shapespace import fit_latent, train_shapespace
from .training import TrainConfig, train_reconstruction

__all__ = ["SALReconstructor", "SALShapeSpace", "check_points", "check_geometry"]

# with samples_per_point="auto", base points times draws is at least this
MIN_BASE_DRAWS = 2000


def check_points(X, dims=(2, 3)) -> np.ndarray:
    """Finite float64 array of shape (N, d) with d in ``dims``."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, ensure_2d=True)
    if X.shape[1] not in dims:
        raise ValueError(f"expected points with {' or '.join(map(str, dims))} coordinates, got {X.shape[1]}")
    return X


def check_geometry(X):
    """Accept a point array, a PointCloud or a TriangleSoup."""
    if isinstance(X, (PointCloud, TriangleSoup)):
        return X
    return PointCloud(check_points(X))


def _anchor_points(data) -> np.ndarray:
    return data.vertices[np.unique(data.triangles)] if isinstance(data, TriangleSoup) else data.points


def _scaled(data, center, scale):
    if isinstance(data, TriangleSoup):
        return TriangleSoup((data.vertices - center) / scale, data.triangles)
    return PointCloud((data.points - center) / scale)


class SALReconstructor(BaseEstimator):
    """Fit a signed implicit function to an unsigned point cloud or triangle soup.

    Input is centered and scaled into the unit ball before training;
    :meth:`decision_function` returns values in input units.

    Parameters
    ----------
    loss : {"l2", "l0"}
        Distance used by the sign-agnostic loss.
    samples_per_point : int or "auto"
        Splat pairs drawn per base point; ``"auto"`` draws enough for at
        least ``MIN_BASE_DRAWS`` base draws in total.
    init_radius : float or "auto"
        Radius of the initial sphere in normalized units; ``"auto"`` uses the
        mean distance of the data to its center.
    """

    def __init__(
        self,
        loss: str = "l2",
        ell: float = 1.0,
        n_layers: int = 8,
        width: int = 512,
        skip: bool = True,
        phi: str = "identity",
        gamma: float = 0.5,
        knn_k: int = 50,
        second_sigma="farthest",
        samples_per_point="auto",
        n_surface_samples: int = 250_000,
        epochs: int = 5000,
        lr: float = 1e-4,
        lr_schedule: str = "none",
        batch_size: int = 5000,
        init_radius="auto",
        resample: bool = False,
        dtype: str = "float64",
        snapshot_epochs: Sequence[int] = (),
        random_state: int = 0,
    ):
        self.loss = loss
        self.ell = ell
        self.n_layers = n_layers
        self.width = width
        self.skip = skip
        self.phi = phi
        self.gamma = gamma
        self.knn_k = knn_k
        self.second_sigma = second_sigma
        self.samples_per_point = samples_per_point
        self.n_surface_samples = n_surface_samples
        self.epochs = epochs
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.batch_size = batch_size
        self.init_radius = init_radius
        self.resample = resample
        self.dtype = dtype
        self.snapshot_epochs = snapshot_epochs
        self.random_state = random_state

    def _configs(self, dim, n_base):
        mlp = MlpConfig.standard(dim, self.n_layers, self.width, self.skip, 0, self.phi, self.gamma)
        spp = self.samples_per_point
        if spp == "auto":
            # small clouds get enough splats per epoch; large ones one pair per point
            spp = max(1, -(-MIN_BASE_DRAWS // n_base))
        sampler = SamplerConfig(self.knn_k, self.second_sigma, int(spp), self.n_surface_samples, True, self.random_state)
        train = TrainConfig(
            epochs=self.epochs, lr=self.lr, lr_schedule=self.lr_schedule, batch_size=self.batch_size,
            seed=self.random_state, loss=LossConfig(self.loss, self.ell), snapshot_epochs=tuple(self.snapshot_epochs),
            resample=self.resample, dtype=self.dtype,
        )
        return mlp, sampler, train

    def fit(self, X, y=None, callback=None):
        data = check_geometry(X)
        pts = _anchor_points(data)
        self.center_ = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        self.scale_ = float(np.max(np.linalg.norm(pts - self.center_, axis=1))) or 1.0
        norm = _scaled(data, self.center_, self.scale_)
        npts = (pts - self.center_) / self.scale_
        if self.init_radius == "auto":
            r = float(np.mean(np.linalg.norm(npts, axis=1)))
            r = r if r > 0 else 0.5
        else:
            r = float(self.init_radius)
        n_base = self.n_surface_samples if isinstance(data, TriangleSoup) else len(pts)
        self.mlp_config_, self.sampler_config_, self.train_config_ = self._configs(data.dim, n_base)
        res = train_reconstruction(norm, self.sampler_config_, self.mlp_config_, self.train_config_, init_radius=r, callback=callback)
        self.init_radius_ = r
        self.params_ = res.params
        self.snapshots_ = res.snapshots
        self.loss_trace_ = res.trace
        self.initial_loss_ = res.initial_loss
        self.bounds_ = default_bounds(pts)
        self.n_features_in_ = data.dim
        return self

    def _field(self, params=None):
        params = self.params_ if params is None else params
        c, s, cfg = self.center_, self.scale_, self.mlp_config_
        return lambda x: s * forward(params, cfg, (np.atleast_2d(x) - c) / s)

    def decision_function(self, X, params=None) -> np.ndarray:
        """Signed implicit value at ``X``, in input units."""
        check_is_fitted(self, "params_")
        X = check_points(X, (self.n_features_in_,))
        return self._field(params)(X)

    def predict(self, X) -> np.ndarray:
        """Side of the zero level-set: +1 or -1 (0 exactly on it)."""
        return np.sign(self.decision_function(X)).astype(np.int64)

    def evaluate_grid(self, resolution=None, bounds=None, params=None):
        check_is_fitted(self, "params_")
        if resolution is None:
            resolution = 512 if self.n_features_in_ == 2 else 128
        return evaluate_grid(self._field(params), bounds or self.bounds_, resolution)

    def extract_surface(self, resolution=None, bounds=None, params=None):
        """Zero level-set as a Polyline (2D) or Mesh (3D) in input units."""
        grid = self.evaluate_grid(resolution, bounds, params)
        return extract_zero_set(grid, self._field(params) if grid.dim == 2 else None)


class SALShapeSpace(TransformerMixin, BaseEstimator):
    """Auto-decoder over a collection of shapes; ``transform`` returns fitted latent means.

    Shapes are used in their own coordinates (no normalization), so a common
    frame across the collection is assumed.
    """

    def __init__(
        self,
        latent_dim: int = 8,
        n_layers: int = 8,
        width: int = 512,
        skip: bool = True,
        epochs: int = 2000,
        lr: float = 5e-4,
        halve_every: int = 500,
        batch_size: int = 64,
        points_per_shape: int = 1000,
        latent_lr: float = 1e-2,
        lam: float = 1e-3,
        ell: float = 1.0,
        knn_k: int = 50,
        second_sigma=0.2,
        n_surface_samples: int = 250_000,
        init_radius: float = 1.0,
        fit_iters: int = 800,
        fit_lr: float = 1e-2,
        dtype: str = "float64",
        random_state: int = 0,
    ):
        self.latent_dim = latent_dim
        self.n_layers = n_layers
        self.width = width
        self.skip = skip
        self.epochs = epochs
        self.lr = lr
        self.halve_every = halve_every
        self.batch_size = batch_size
        self.points_per_shape = points_per_shape
        self.latent_lr = latent_lr
        self.lam = lam
        self.ell = ell
        self.knn_k = knn_k
        self.second_sigma = second_sigma
        self.n_surface_samples = n_surface_samples
        self.init_radius = init_radius
        self.fit_iters = fit_iters
        self.fit_lr = fit_lr
        self.dtype = dtype
        self.random_state = random_state

    def _sample_sets(self, X):
        if isinstance(X, (np.ndarray, PointCloud, TriangleSoup, SalSampleSet)):
            raise TypeError("pass a sequence of shapes")
        out = []
        for i, shape in enumerate(X):
            if isinstance(shape, SalSampleSet):
                out.append(shape)
            else:
                cfg = SamplerConfig(self.knn_k, self.second_sigma, 1, self.n_surface_samples, False, self.random_state + i)
                out.append(build_training_set(check_geometry(shape), cfg))
        if not out:
            raise ValueError("no shapes given")
        return out

    def fit(self, X, y=None, callback=None):
        """``X``: sequence of shapes (arrays, clouds, soups or sample sets); ``y``: optional shape ids."""
        sets = self._sample_sets(X)
        dim = sets[0].dim
        self.mlp_config_ = MlpConfig.standard(dim, self.n_layers, self.width, self.skip, self.latent_dim)
        self.train_config_ = TrainConfig.shape_space(
            epochs=self.epochs, lr=self.lr, halve_every=self.halve_every, batch_size=self.batch_size,
            seed=self.random_state, loss=LossConfig("l2", self.ell, self.lam), dtype=self.dtype,
        )
        res = train_shapespace(sets, self.mlp_config_, self.train_config_, points_per_shape=self.points_per_shape,
                               init_radius=self.init_radius, latent_lr=self.latent_lr, callback=callback)
        if y is not None:
            res.table.ids = [str(i) for i in y]
        self.params_ = res.params
        self.table_ = res.table
        self.loss_trace_ = res.trace
        self.n_features_in_ = dim
        return self

    def transform(self, X) -> np.ndarray:
        """Latent means fitted to each shape with the decoder frozen."""
        check_is_fitted(self, "params_")
        self.fit_results_ = [
            fit_latent(self.params_, self.mlp_config_, s, self.fit_iters, self.fit_lr, ell=self.ell, seed=self.random_state)
            for s in self._sample_sets(X)
        ]
        return np.stack([r.code.mu for r in self.fit_results_])

    def decision_function(self, X, latent) -> np.ndarray:
        check_is_fitted(self, "params_")
        return forward(self.params_, self.mlp_config_, check_points(X, (self.n_features_in_,)), np.asarray(latent, dtype=np.float64))

    def decode(self, latent, resolution: int = 64, bounds=None):
        """Contour the decoder at one latent code."""
        check_is_fitted(self, "params_")
        d = self.n_features_in_
        bounds = bounds or (np.full(d, -1.5), np.full(d, 1.5))
        mu = np.asarray(latent, dtype=np.float64)
        field = lambda x: forward(self.params_, self.mlp_config_, x, mu)
        grid = evaluate_grid(field, bounds, resolution)
        return extract_zero_set(grid, field if d == 2 else None)
