"""Adam optimization of the sign-agnostic losses for a single shape."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .checkpoint import save_mlp
from .geometry import NearestIndex
from .loss import LossConfig, sal_loss
from .mlp import MlpConfig, MlpParams, TapedMlp, geometric_init
from .sampling import SalSampleSet, SamplerConfig, build_training_set, draw_minibatch

__all__ = [
    "NumericalAbort",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "TrainResult",
    "train_reconstruction",
    "write_loss_trace",
    "read_loss_trace",
]


class NumericalAbort(FloatingPointError):
    """Raised when a gradient or loss becomes non-finite."""


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: Optional[float] = None) -> dict:
    """Bias-corrected Adam update; returns new parameter arrays and advances ``state``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(f"non-finite gradient for {k!r} at step {state.t + 1}")
        if np.shape(g) != np.shape(params[k]):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {k!r} {np.shape(params[k])}")
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = dict(params)
    for k, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(k, 0.0) * b1 + (1 - b1) * g
        v = state.v.get(k, 0.0) * b2 + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    lr: float = 1e-4
    lr_schedule: str = "none"
    halve_every: int = 500
    batch_size: int = 5000
    seed: int = 0
    loss: LossConfig = LossConfig()
    checkpoint_every: int = 0
    snapshot_epochs: tuple = ()
    resample: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lr_schedule not in ("none", "halve"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.halve_every < 1 or self.batch_size < 1:
            raise ValueError("halve_every and batch_size must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        object.__setattr__(self, "snapshot_epochs", tuple(int(e) for e in self.snapshot_epochs))

    @classmethod
    def single_shape(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 5000, "lr": 1e-4, "lr_schedule": "none", **kw})

    @classmethod
    def shape_space(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 2000, "lr": 5e-4, "lr_schedule": "halve", "halve_every": 500, "batch_size": 64, **kw})

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch number."""
        if self.lr_schedule == "halve":
            return self.lr * 0.5 ** ((epoch - 1) // self.halve_every)
        return self.lr

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "lr_schedule": self.lr_schedule,
            "halve_every": self.halve_every,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss": {"variant": self.loss.variant, "ell": self.loss.ell, "lam": self.loss.lam},
            "checkpoint_every": self.checkpoint_every,
            "snapshot_epochs": list(self.snapshot_epochs),
            "resample": self.resample,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        if "snapshot_epochs" in d:
            d["snapshot_epochs"] = tuple(d["snapshot_epochs"])
        return cls(**d)


@dataclass
class TrainResult:
    params: MlpParams
    trace: list  # (epoch, mean_loss, lr) rows
    snapshots: dict = field(default_factory=dict)
    initial_loss: float = float("nan")

    @property
    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.trace])


def batch_loss_and_grads(params: MlpParams, mlp_cfg: MlpConfig, batch: SalSampleSet, loss_cfg: LossConfig, dtype=np.float64):
    tape = ad.Tape(dtype)
    net = TapedMlp(tape, params, mlp_cfg)
    loss = sal_loss(net, batch, loss_cfg)
    val = float(loss.data)
    if not np.isfinite(val):
        raise NumericalAbort("non-finite loss")
    return val, ad.backward(tape, loss)


def mean_loss(params: MlpParams, mlp_cfg: MlpConfig, samples: SalSampleSet, loss_cfg: LossConfig, chunk: int = 20000) -> float:
    """Loss over a full sample set, evaluated in chunks."""
    total = 0.0
    for s in range(0, len(samples), chunk):
        part = samples[np.arange(s, min(s + chunk, len(samples)))]
        tape = ad.Tape()
        net = TapedMlp(tape, params, mlp_cfg, trainable=False)
        total += float(sal_loss(net, part, loss_cfg).data) * len(part)
    return total / len(samples)


def train_reconstruction(
    data,
    sampler_cfg: SamplerConfig,
    mlp_cfg: MlpConfig,
    train_cfg: TrainConfig,
    init_radius: float = 1.0,
    params: Optional[MlpParams] = None,
    samples: Optional[SalSampleSet] = None,
    checkpoint_path=None,
    callback: Optional[Callable[[int, float, MlpParams], None]] = None,
) -> TrainResult:
    """Fit one shape from geometric initialization with Adam.

    ``samples`` may be passed to reuse a precomputed training set.  With
    ``train_cfg.resample`` the splats are redrawn at every epoch.
    """
    if mlp_cfg.latent_dim:
        raise ValueError("single-shape training expects latent_dim = 0")
    index = None
    if samples is None or train_cfg.resample:
        index = NearestIndex(data)
    if samples is None:
        samples = build_training_set(data, sampler_cfg, index)
    if samples.dim != mlp_cfg.input_dim:
        raise ValueError(f"samples have dimension {samples.dim}, network expects {mlp_cfg.input_dim}")
    if params is None:
        params = geometric_init(mlp_cfg, init_radius, seed=train_cfg.seed)
    params.check(mlp_cfg)
    dtype = np.dtype(train_cfg.dtype)
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState(lr=train_cfg.lr)
    cur = params.as_dict()
    result = TrainResult(params.copy(), [], {}, mean_loss(params, mlp_cfg, samples, train_cfg.loss))
    snaps = set(train_cfg.snapshot_epochs)

    for epoch in range(1, train_cfg.epochs + 1):
        if train_cfg.resample and epoch > 1:
            samples = build_training_set(data, replace(sampler_cfg, seed=sampler_cfg.seed + epoch - 1), index)
        lr = train_cfg.lr_at(epoch)
        total, count = 0.0, 0
        for batch in draw_minibatch(samples, train_cfg.batch_size, rng):
            val, grads = batch_loss_and_grads(MlpParams.from_dict(cur), mlp_cfg, batch, train_cfg.loss, dtype)
            cur = adam_step(state, cur, grads, lr)
            total += val * len(batch)
            count += len(batch)
        epoch_loss = total / count
        result.trace.append((epoch, epoch_loss, lr))
        p = None
        if epoch in snaps:
            p = MlpParams.from_dict(cur)
            result.snapshots[epoch] = p.copy()
        if checkpoint_path is not None and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            p = p or MlpParams.from_dict(cur)
            save_mlp(checkpoint_path, p, mlp_cfg, {"epoch": epoch, "loss": epoch_loss})
        if callback is not None:
            callback(epoch, epoch_loss, p or MlpParams.from_dict(cur))
    result.params = MlpParams.from_dict(cur)
    return result


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "lr"])
        for epoch, loss, lr in trace:
            w.writerow([int(epoch), repr(float(loss)), repr(float(lr))])


def read_loss_trace(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["mean_loss"]), float(r["lr"])) for r in rows]
