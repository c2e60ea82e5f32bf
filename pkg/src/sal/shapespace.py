"""Latent-conditioned decoder trained jointly with a per-shape latent table.

Each training shape owns a code ``(mu, eta)``; the decoder sees
``w = mu + exp(eta / 2) * eps`` with one standard normal ``eps`` per shape
and step.  The per-shape objective is the L2 sign-agnostic loss plus
``lam ||mu||_1 + ||eta + 1||_1``, averaged over the shapes of a minibatch.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .checkpoint import load_arrays, save_arrays
from .loss import latent_regularizer, sample_latent, sal_loss_l2
from .mlp import MlpConfig, MlpParams, TapedMlp, geometric_init
from .sampling import SalSampleSet, load_training_set
from .training import AdamState, NumericalAbort, TrainConfig, adam_step

__all__ = [
    "LatentCode",
    "LatentTable",
    "ShapeDataset",
    "ShapeSpaceResult",
    "FitLatentResult",
    "train_shapespace",
    "fit_latent",
    "interpolate_latent",
    "reconstruction_loss",
]


@dataclass
class LatentCode:
    mu: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).ravel()
        self.eta = np.asarray(self.eta, dtype=np.float64).ravel()
        if self.mu.shape != self.eta.shape:
            raise ValueError("mu and eta must have the same length")

    @property
    def dim(self) -> int:
        return len(self.mu)

    @classmethod
    def origin(cls, k: int) -> "LatentCode":
        return cls(np.zeros(k), -np.ones(k))


@dataclass
class LatentTable:
    """Codes of the training shapes, row ``i`` belonging to ``ids[i]``."""

    ids: list
    mu: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.eta = np.asarray(self.eta, dtype=np.float64)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate shape id")
        if self.mu.shape != (len(self.ids), self.mu.shape[-1]) or self.eta.shape != self.mu.shape:
            raise ValueError("latent table arrays do not match the id list")

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, shape_id) -> LatentCode:
        try:
            i = self.ids.index(str(shape_id))
        except ValueError:
            raise KeyError(f"unknown shape id {shape_id!r}") from None
        return LatentCode(self.mu[i].copy(), self.eta[i].copy())

    def first_principal_component(self) -> np.ndarray:
        """Projection of every ``mu`` onto the leading principal axis."""
        centered = self.mu - self.mu.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        return centered @ vt[0]

    def save(self, path, meta: Optional[dict] = None):
        arrays = {}
        for i, sid in enumerate(self.ids):
            arrays[f"mu/{sid}"] = self.mu[i]
            arrays[f"eta/{sid}"] = self.eta[i]
        save_arrays(path, arrays, "latent_table", {"ids": self.ids, "latent_dim": self.latent_dim}, meta)

    @classmethod
    def load(cls, path) -> "LatentTable":
        arrays, header = load_arrays(path, "latent_table")
        ids = header["config"]["ids"]
        return cls(ids, np.stack([arrays[f"mu/{i}"] for i in ids]), np.stack([arrays[f"eta/{i}"] for i in ids]))


@dataclass
class ShapeDataset:
    """Shape ids with their training sets (file paths or in-memory sets)."""

    ids: list
    sources: list

    def __post_init__(self):
        if not self.ids:
            raise ValueError("dataset has no shapes")
        if len(self.ids) != len(self.sources):
            raise ValueError("ids and sources differ in length")
        if len(set(map(str, self.ids))) != len(self.ids):
            raise ValueError("duplicate shape id")
        self.ids = [str(i) for i in self.ids]

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_manifest(cls, path) -> "ShapeDataset":
        """JSON ``{"shapes": [{"id": ..., "path": ...}, ...]}``; paths relative to the manifest."""
        with open(path) as fh:
            doc = json.load(fh)
        root = os.path.dirname(os.path.abspath(path))
        shapes = doc["shapes"]
        return cls([s["id"] for s in shapes], [os.path.join(root, s["path"]) for s in shapes])

    def load(self) -> list:
        """Materialize every training set, failing on the first missing shape."""
        out = []
        for sid, src in zip(self.ids, self.sources):
            if isinstance(src, SalSampleSet):
                out.append(src)
                continue
            if src is None or not os.path.exists(src):
                raise FileNotFoundError(f"shape {sid!r}: training set {src!r} not found")
            out.append(load_training_set(src)[0])
        dims = {s.dim for s in out}
        if len(dims) != 1:
            raise ValueError("training sets have mixed dimensions")
        return out


@dataclass
class ShapeSpaceResult:
    params: MlpParams
    table: LatentTable
    trace: list = field(default_factory=list)


def _row_owner(n_shapes, per_shape):
    return np.repeat(np.arange(n_shapes), per_shape)


def _pick(rng, n, m):
    return rng.choice(n, size=m, replace=n < m)


def train_shapespace(
    dataset,
    mlp_cfg: MlpConfig,
    train_cfg: TrainConfig,
    lam: Optional[float] = None,
    points_per_shape: int = 1000,
    init_radius: float = 1.0,
    mu_init_std: float = 1e-2,
    latent_lr: Optional[float] = None,
    deterministic: bool = False,
    callback=None,
) -> ShapeSpaceResult:
    """Jointly fit decoder weights and the latent table with Adam.

    An epoch visits every shape once in minibatches of ``train_cfg.batch_size``
    shapes; each shape contributes ``points_per_shape`` random samples per step.
    ``latent_lr`` sets a separate base learning rate for the codes (the
    schedule applies to both).  ``deterministic`` disables the latent noise.
    """
    if mlp_cfg.latent_dim < 1:
        raise ValueError("shape-space training needs latent_dim > 0")
    if isinstance(dataset, ShapeDataset):
        ids, sets = dataset.ids, dataset.load()
    else:
        ids = [str(i) for i in range(len(dataset))]
        sets = list(dataset)
    if sets[0].dim != mlp_cfg.input_dim:
        raise ValueError("training sets do not match the network input dimension")
    lam = train_cfg.loss.lam if lam is None else lam
    ell = train_cfg.loss.ell
    k = mlp_cfg.latent_dim
    S = len(sets)
    rng = np.random.default_rng(train_cfg.seed)
    params = geometric_init(mlp_cfg, init_radius, seed=train_cfg.seed)
    cur = {"net/" + n: v for n, v in params.as_dict().items()}
    cur["mu"] = mu_init_std * rng.standard_normal((S, k))
    cur["eta"] = -np.ones((S, k))
    state = AdamState(lr=train_cfg.lr)
    code_state = AdamState(lr=train_cfg.lr if latent_lr is None else latent_lr)
    code_ratio = code_state.lr / train_cfg.lr
    dtype = np.dtype(train_cfg.dtype)
    trace = []
    B = min(train_cfg.batch_size, S)

    for epoch in range(1, train_cfg.epochs + 1):
        lr = train_cfg.lr_at(epoch)
        order = rng.permutation(S)
        total = 0.0
        for s in range(0, S, B):
            shapes = order[s:s + B]
            picks = [sets[i][_pick(rng, len(sets[i]), points_per_shape)] for i in shapes]
            batch = SalSampleSet.concatenate(picks)
            eps = np.zeros((len(shapes), k)) if deterministic else rng.standard_normal((len(shapes), k))

            tape = ad.Tape(dtype)
            net = TapedMlp(tape, MlpParams.from_dict({n[4:]: v for n, v in cur.items() if n.startswith("net/")}), mlp_cfg, prefix="net/")
            mu_all = tape.parameter(cur["mu"], "mu")
            eta_all = tape.parameter(cur["eta"], "eta")
            mu = ad.take_rows(mu_all, shapes)
            eta = ad.take_rows(eta_all, shapes)
            w = sample_latent(mu, eta, tape.constant(eps))
            latent = ad.take_rows(w, _row_owner(len(shapes), points_per_shape))
            loss_r = sal_loss_l2(net, batch, ell, latent=latent)
            reg = ad.scale(latent_regularizer(mu, eta, lam), 1.0 / len(shapes))
            loss = ad.add(loss_r, reg)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericalAbort(f"non-finite loss at epoch {epoch}")
            grads = ad.backward(tape, loss)
            codes = {n: grads.pop(n) for n in ("mu", "eta")}
            cur = adam_step(state, cur, grads, lr)
            cur = adam_step(code_state, cur, codes, lr * code_ratio)
            total += val * len(shapes)
        trace.append((epoch, total / S, lr))
        if callback is not None:
            callback(epoch, total / S)

    params = MlpParams.from_dict({n[4:]: v for n, v in cur.items() if n.startswith("net/")})
    return ShapeSpaceResult(params, LatentTable(ids, cur["mu"], cur["eta"]), trace)


def reconstruction_loss(params: MlpParams, cfg: MlpConfig, samples: SalSampleSet, mu, ell: float = 1.0, chunk: int = 20000) -> float:
    """L2 sign-agnostic loss of one shape at latent ``mu`` (no noise)."""
    mu = np.asarray(mu, dtype=np.float64)
    total = 0.0
    for s in range(0, len(samples), chunk):
        part = samples[np.arange(s, min(s + chunk, len(samples)))]
        tape = ad.Tape()
        net = TapedMlp(tape, params, cfg, trainable=False)
        total += float(sal_loss_l2(net, part, ell, latent=tape.constant(mu)).data) * len(part)
    return total / len(samples)


@dataclass
class FitLatentResult:
    code: LatentCode
    loss: float
    loss_at_origin: float
    trace: list = field(default_factory=list)


def fit_latent(
    params: MlpParams,
    cfg: MlpConfig,
    samples: SalSampleSet,
    iters: int = 800,
    lr: float = 1e-3,
    batch_size: int = 5000,
    ell: float = 1.0,
    seed: int = 0,
) -> FitLatentResult:
    """Test-time optimization of ``mu`` alone with the decoder frozen.

    Starts from the origin with ``eta`` held at ``-1`` and no latent noise;
    the objective is the reconstruction loss.
    """
    if cfg.latent_dim < 1:
        raise ValueError("decoder has no latent input")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    rng = np.random.default_rng(seed)
    k = cfg.latent_dim
    mu = np.zeros(k)
    state = AdamState(lr=lr)
    trace = []
    for _ in range(iters):
        batch = samples[_pick(rng, len(samples), min(batch_size, len(samples)))]
        tape = ad.Tape()
        net = TapedMlp(tape, params, cfg, trainable=False)
        m = tape.parameter(mu, "mu")
        loss = sal_loss_l2(net, batch, ell, latent=m)
        g = ad.backward(tape, loss)
        mu = adam_step(state, {"mu": mu}, g)["mu"]
        trace.append(float(loss.data))
    return FitLatentResult(
        LatentCode(mu, -np.ones(k)),
        reconstruction_loss(params, cfg, samples, mu, ell),
        reconstruction_loss(params, cfg, samples, np.zeros(k), ell),
        trace,
    )


def interpolate_latent(code_a: LatentCode, code_b: LatentCode, t: float) -> LatentCode:
    """Linear blend of both ``mu`` and ``eta``; ``t`` must lie in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if code_a.dim != code_b.dim:
        raise ValueError("codes have different latent dimensions")
    if t == 0.0:
        return LatentCode(code_a.mu.copy(), code_a.eta.copy())
    if t == 1.0:
        return LatentCode(code_b.mu.copy(), code_b.eta.copy())
    return LatentCode((1 - t) * code_a.mu + t * code_b.mu, (1 - t) * code_a.eta + t * code_b.eta)
