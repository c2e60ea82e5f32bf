"""Implicit MLP ``f(x) = phi(w^T f_l(...f_1([z, x])) + b)`` with a skip layer.

Hidden layers are ``relu(W y + b)``.  A skip layer receives
``(y, [z, x]) / sqrt(2)``, which keeps the norm of its input close to
``||x||`` under geometric initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad

__all__ = [
    "MlpConfig",
    "MlpParams",
    "TapedMlp",
    "geometric_init",
    "single_layer_init",
    "forward",
    "init_sphere_error",
]

SKIP_SCALE = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class MlpConfig:
    """Architecture of the implicit network.

    ``hidden`` holds the output width of each hidden layer.  The input width
    of a skip layer is the previous width plus ``input_dim + latent_dim``.
    """

    input_dim: int = 3
    hidden: tuple = (512, 512, 509, 512, 512, 512, 512)
    skip_layers: tuple = (3,)
    phi: str = "identity"
    gamma: float = 0.5
    latent_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "skip_layers", tuple(sorted(int(s) for s in self.skip_layers)))
        if self.input_dim not in (2, 3):
            raise ValueError(f"input_dim must be 2 or 3, got {self.input_dim}")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if any(s <= 0 or s >= len(self.hidden) for s in self.skip_layers):
            raise ValueError(f"skip layers must index hidden layers 1..{len(self.hidden) - 1}")
        if self.latent_dim < 0:
            raise ValueError("latent_dim must be >= 0")
        ad._check_phi(self.phi, self.gamma)

    @classmethod
    def standard(cls, input_dim=3, n_layers=8, width=512, skip=True, latent_dim=0, phi="identity", gamma=0.5):
        """``n_layers`` counts the output layer, as in "an 8-layer MLP".

        With ``skip`` the middle hidden layer receives the input, and the
        layer before it is narrowed so every hidden layer sees ``width``
        inputs.
        """
        n_hidden = n_layers - 1
        if n_hidden < 1:
            raise ValueError("need at least one hidden layer")
        hidden = [width] * n_hidden
        skips = ()
        if skip and n_hidden >= 2:
            j = n_hidden // 2
            narrowed = width - (input_dim + latent_dim)
            if narrowed <= 0:
                raise ValueError("width too small for the skip connection")
            hidden[j - 1] = narrowed
            skips = (j,)
        return cls(input_dim, tuple(hidden), skips, phi, gamma, latent_dim)

    @property
    def in_width(self) -> int:
        return self.input_dim + self.latent_dim

    def layer_input_widths(self) -> list:
        widths = [self.in_width]
        for j in range(1, len(self.hidden)):
            widths.append(self.hidden[j - 1] + (self.in_width if j in self.skip_layers else 0))
        return widths

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["skip_layers"] = list(self.skip_layers)
        return d

    @classmethod
    def from_dict(cls, d) -> "MlpConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class MlpParams:
    weights: list
    biases: list
    w: np.ndarray
    b: float

    def as_dict(self) -> dict:
        d = {}
        for i, (W, bb) in enumerate(zip(self.weights, self.biases)):
            d[f"W{i}"] = W
            d[f"b{i}"] = bb
        d["w"] = self.w
        d["b"] = np.asarray(self.b, dtype=np.float64)
        return d

    @classmethod
    def from_dict(cls, d) -> "MlpParams":
        n = sum(1 for k in d if k.startswith("W"))
        return cls(
            [np.asarray(d[f"W{i}"], dtype=np.float64) for i in range(n)],
            [np.asarray(d[f"b{i}"], dtype=np.float64) for i in range(n)],
            np.asarray(d["w"], dtype=np.float64),
            float(np.asarray(d["b"])),
        )

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.w.copy(), float(self.b))

    def negated(self) -> "MlpParams":
        """Parameters of ``-f`` (valid for anti-symmetric ``phi``)."""
        p = self.copy()
        p.w = -p.w
        p.b = -p.b
        return p

    def check(self, cfg: MlpConfig):
        widths = cfg.layer_input_widths()
        if len(self.weights) != len(cfg.hidden):
            raise ValueError("layer count does not match config")
        for i, (W, bb) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (cfg.hidden[i], widths[i]) or bb.shape != (cfg.hidden[i],):
                raise ValueError(f"layer {i} shapes {W.shape}/{bb.shape} do not match config")
        if self.w.shape != (cfg.hidden[-1],):
            raise ValueError("output weight shape does not match config")
        for v in self.as_dict().values():
            if not np.all(np.isfinite(v)):
                raise ValueError("non-finite parameter")


def geometric_init(cfg: MlpConfig, r: float = 1.0, seed: int = 0) -> MlpParams:
    """Initialize so that ``f(x) ~ phi(||x|| - r)``.

    Hidden weights are N(0, std=sqrt(2 / d_out)), biases zero, output
    weights ``sqrt(pi / d_out)`` and output bias ``-r``.  Latent input
    columns start at zero so the initial surface ignores the latent code.
    """
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    rng = np.random.default_rng(seed)
    widths = cfg.layer_input_widths()
    k = cfg.latent_dim
    weights, biases = [], []
    for i, (d_out, d_in) in enumerate(zip(cfg.hidden, widths)):
        W = rng.normal(0.0, math.sqrt(2.0) / math.sqrt(d_out), size=(d_out, d_in))
        if k:
            if i == 0:
                W[:, :k] = 0.0
            elif i in cfg.skip_layers:
                off = cfg.hidden[i - 1]
                W[:, off:off + k] = 0.0
        weights.append(W)
        biases.append(np.zeros(d_out))
    d_last = cfg.hidden[-1]
    w = np.full(d_last, math.sqrt(math.pi) / math.sqrt(d_last))
    return MlpParams(weights, biases, w, -float(r))


def single_layer_init(input_dim: int, width: int, sigma: float = 1.0, r: float = 1.0, seed: int = 0):
    """One hidden layer with N(0, sigma^2) weights and ``w = sqrt(2 pi)/(sigma k)``."""
    if not r > 0 or not sigma > 0:
        raise ValueError("r and sigma must be positive")
    cfg = MlpConfig(input_dim=input_dim, hidden=(width,), skip_layers=())
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, sigma, size=(width, input_dim))
    w = np.full(width, math.sqrt(2.0 * math.pi) / (sigma * width))
    return cfg, MlpParams([W], [np.zeros(width)], w, -float(r))


def _network_input(cfg: MlpConfig, x, latent):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != cfg.input_dim:
        raise ValueError(f"points have dimension {X.shape[-1]}, network expects {cfg.input_dim}")
    if cfg.latent_dim:
        if latent is None:
            raise ValueError("network expects a latent code")
        z = np.asarray(latent, dtype=np.float64)
        if z.shape[-1] != cfg.latent_dim:
            raise ValueError(f"latent has dimension {z.shape[-1]}, network expects {cfg.latent_dim}")
        z = np.broadcast_to(z, X.shape[:-1] + (cfg.latent_dim,))
        X = np.concatenate([z, X], axis=-1)
    elif latent is not None:
        raise ValueError("network has no latent input")
    return X, single


def forward(params: MlpParams, cfg: MlpConfig, x, z=None, chunk: int = 65536):
    """Evaluate ``f`` at one point (returns float) or a batch (returns array)."""
    X, single = _network_input(cfg, x, z)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        inp = X[s:s + chunk]
        y = inp
        for i, (W, b) in enumerate(zip(params.weights, params.biases)):
            if i in cfg.skip_layers:
                y = np.concatenate([y, inp], axis=-1) * SKIP_SCALE
            y = np.maximum(y @ W.T + b, 0.0)
        out[s:s + chunk] = ad.strong_nonlinearity_value(y @ params.w + params.b, cfg.phi, cfg.gamma)
    return float(out[0]) if single else out


class TapedMlp:
    """Network parameters registered on a tape for differentiation."""

    def __init__(self, tape: ad.Tape, params: MlpParams, cfg: MlpConfig, trainable: bool = True, prefix: str = ""):
        self.tape = tape
        self.cfg = cfg
        self.prefix = prefix
        names = params.as_dict()
        if trainable:
            self.t = {k: tape.parameter(v, prefix + k) for k, v in names.items()}
        else:
            self.t = {k: tape.constant(v) for k, v in names.items()}
        self.n_layers = len(params.weights)

    def __call__(self, x, latent=None) -> ad.Tensor:
        """``x``: (B, d) array or tensor; ``latent``: (B, k) or (k,) tensor."""
        tape, cfg = self.tape, self.cfg
        x = tape.lift(x)
        if x.ndim == 1:
            raise ValueError("pass points as a (B, d) batch")
        if x.shape[-1] != cfg.input_dim:
            raise ValueError(f"points have dimension {x.shape[-1]}, network expects {cfg.input_dim}")
        if cfg.latent_dim:
            if latent is None:
                raise ValueError("network expects a latent code")
            latent = tape.lift(latent)
            if latent.ndim == 1:
                latent = ad.add(tape.constant(np.zeros((x.shape[0], cfg.latent_dim))), latent)
            if latent.shape != (x.shape[0], cfg.latent_dim):
                raise ValueError(f"latent shape {latent.shape} does not match batch")
            inp = ad.concat(latent, x)
        else:
            if latent is not None:
                raise ValueError("network has no latent input")
            inp = x
        y = inp
        for i in range(self.n_layers):
            if i in cfg.skip_layers:
                y = ad.scale(ad.concat(y, inp), SKIP_SCALE)
            y = ad.relu(ad.linear(self.t[f"W{i}"], y, self.t[f"b{i}"]))
        a = ad.linear(self.t["w"], y, self.t["b"])
        return ad.strong_nonlinearity(a, cfg.phi, cfg.gamma)

    def split_grads(self, grads: dict) -> dict:
        p = self.prefix
        return {k[len(p):]: v for k, v in grads.items() if k.startswith(p) and k[len(p):] in self.t}


def init_sphere_error(params: MlpParams, cfg: MlpConfig, r: float, n_samples: int = 10000, box=(-2.0, 2.0), seed: int = 0) -> dict:
    """Deviation of ``f`` from ``phi(||x|| - r)`` over uniform samples in a box."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = box
    X = rng.uniform(lo, hi, size=(n_samples, cfg.input_dim))
    z = np.zeros(cfg.latent_dim) if cfg.latent_dim else None
    target = ad.strong_nonlinearity_value(np.linalg.norm(X, axis=1) - r, cfg.phi, cfg.gamma)
    err = np.abs(forward(params, cfg, X, z) - target)
    return {"mean_abs_err": float(err.mean()), "max_abs_err": float(err.max())}
