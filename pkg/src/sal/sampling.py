"""Training distributions: Gaussian splats around the data plus on-surface points.

Each base point ``x`` contributes draws from ``N(x, s1^2 I)`` with ``s1`` the
distance to its ``knn_k``-th neighbour, draws from ``N(x, s2^2 I)`` with
``s2`` either the distance to the farthest data point or a constant, and the
point itself tagged as on-surface.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict, field
from typing import NamedTuple, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import NearestIndex, PointCloud, TriangleSoup, sample_soup_surface

__all__ = [
    "KIND_SURFACE",
    "KIND_SPLAT",
    "SalSample",
    "SalSampleSet",
    "SamplerConfig",
    "build_training_set",
    "draw_minibatch",
    "save_training_set",
    "load_training_set",
    "farthest_distances",
]

# the kind byte doubles as the L0 distance of the sample
KIND_SURFACE = 0
KIND_SPLAT = 1

_MAGIC = b"SALSMPL\x00"
_VERSION = 1


class SalSample(NamedTuple):
    z: np.ndarray
    target: float
    kind: int


@dataclass
class SalSampleSet:
    """Struct-of-arrays sample list: ``z`` (N, d), ``target`` (N,), ``kind`` (N,)."""

    z: np.ndarray
    target: np.ndarray
    kind: np.ndarray
    # per base point splat widths, kept for diagnostics
    sigma_near: np.ndarray = field(default=None, repr=False)
    sigma_far: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.kind = np.asarray(self.kind, dtype=np.uint8)
        n = len(self.z)
        if self.z.ndim != 2 or self.target.shape != (n,) or self.kind.shape != (n,):
            raise ValueError("inconsistent sample arrays")
        if not np.all(np.isfinite(self.target)) or np.any(self.target < 0):
            raise ValueError("targets must be finite and nonnegative")

    def __len__(self):
        return len(self.z)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return SalSample(self.z[i], float(self.target[i]), int(self.kind[i]))
        return SalSampleSet(self.z[i], self.target[i], self.kind[i])

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def of_kind(self, kind) -> "SalSampleSet":
        return self[self.kind == kind]

    @classmethod
    def concatenate(cls, sets) -> "SalSampleSet":
        return cls(
            np.concatenate([s.z for s in sets]),
            np.concatenate([s.target for s in sets]),
            np.concatenate([s.kind for s in sets]),
        )


@dataclass(frozen=True)
class SamplerConfig:
    """``second_sigma`` is ``"farthest"`` or a positive constant."""

    knn_k: int = 50
    second_sigma: Union[str, float] = "farthest"
    samples_per_point: int = 1
    n_surface_samples: int = 250_000
    include_surface: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be >= 1")
        if isinstance(self.second_sigma, str):
            if self.second_sigma != "farthest":
                raise ValueError(f"unknown second_sigma {self.second_sigma!r}")
        elif not float(self.second_sigma) > 0:
            raise ValueError("constant second_sigma must be positive")

    def to_dict(self):
        return asdict(self)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


def farthest_distances(points: np.ndarray, block: int = 2048) -> np.ndarray:
    """Distance from every point to the farthest point of the set.

    The farthest point always lies on the convex hull, so only hull vertices
    are scanned; degenerate (flat) sets fall back to all points.
    """
    try:
        cand = points[ConvexHull(points).vertices]
    except (QhullError, ValueError):
        cand = points
    out = np.empty(len(points))
    for s in range(0, len(points), block):
        d = np.sqrt(((points[s:s + block, None, :] - cand[None]) ** 2).sum(-1))
        out[s:s + block] = d.max(axis=1)
    return out


def _splat(rng, base, sigma, m):
    n, d = base.shape
    eps = rng.standard_normal((m, n, d))
    return (base[None] + sigma[None, :, None] * eps).reshape(m * n, d)


def build_training_set(data, cfg: SamplerConfig = SamplerConfig(), index: NearestIndex = None) -> SalSampleSet:
    """Precompute ``(z, h2(z), kind)`` samples for one shape.

    Output order is canonical: near splats, far splats, then surface points,
    each block ordered by draw and base point.
    """
    if isinstance(data, np.ndarray):
        data = PointCloud(data)
    rng = np.random.default_rng(cfg.seed)
    if isinstance(data, TriangleSoup):
        base = sample_soup_surface(data, cfg.n_surface_samples, seed=rng.integers(2**63)).points
    elif isinstance(data, PointCloud):
        base = data.points
    else:
        raise TypeError(f"cannot sample {type(data).__name__}")
    if index is None:
        index = NearestIndex(data)
    n = len(base)

    if cfg.second_sigma == "farthest":
        sigma2 = farthest_distances(base)
        # a single point has no extent to measure
        sigma2 = np.where(sigma2 > 0, sigma2, 1.0)
    else:
        sigma2 = np.full(n, float(cfg.second_sigma))

    if n >= 2:
        k = min(cfg.knn_k, n - 1)
        sigma1 = NearestIndex(PointCloud(base)).knn(base, k, exclude_self=True)
        sigma1 = np.atleast_1d(sigma1)
        sigma1 = np.where(sigma1 > 0, sigma1, sigma2)
    else:
        sigma1 = sigma2.copy()

    m = cfg.samples_per_point
    near = _splat(rng, base, sigma1, m)
    far = _splat(rng, base, sigma2, m)
    z = np.concatenate([near, far])
    target = np.atleast_1d(index.nearest(z)[0])
    kind = np.full(len(z), KIND_SPLAT, dtype=np.uint8)
    if cfg.include_surface:
        # one surface copy per splat pair keeps the 1:2 surface-to-splat ratio
        z = np.concatenate([z, np.tile(base, (m, 1))])
        target = np.concatenate([target, np.zeros(m * n)])
        kind = np.concatenate([kind, np.full(m * n, KIND_SURFACE, dtype=np.uint8)])
    return SalSampleSet(z, target, kind, sigma_near=sigma1, sigma_far=sigma2)


def draw_minibatch(samples: SalSampleSet, batch_size: int, rng: np.random.Generator):
    """Yield one epoch of minibatches, sampled without replacement."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(len(samples))
    for s in range(0, len(perm), batch_size):
        yield samples[perm[s:s + batch_size]]


def _record_dtype(dim):
    return np.dtype([("z", "<f8", (dim,)), ("target", "<f8"), ("kind", "u1")])


def save_training_set(path, samples: SalSampleSet, config_hash: bytes = b"\x00" * 32):
    """Binary layout (little-endian)::

        8s  magic "SALSMPL\\0"
        u32 version
        u32 dim
        u64 count
        32s config hash
        count records of (dim x f64 z, f64 target, u8 kind)
    """
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    rec = np.empty(len(samples), dtype=_record_dtype(samples.dim))
    rec["z"] = samples.z
    rec["target"] = samples.target
    rec["kind"] = samples.kind
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IIQ", _VERSION, samples.dim, len(samples)) + config_hash)
        fh.write(rec.tobytes())


def load_training_set(path):
    """Returns ``(samples, config_hash)``."""
    with open(path, "rb") as fh:
        head = fh.read(8 + 16 + 32)
        if len(head) < 56 or head[:8] != _MAGIC:
            raise ValueError(f"{path}: not a training-set file")
        version, dim, count = struct.unpack("<IIQ", head[8:24])
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        dt = _record_dtype(dim)
        buf = fh.read()
    if len(buf) != count * dt.itemsize:
        raise ValueError(f"{path}: truncated training-set file")
    rec = np.frombuffer(buf, dtype=dt)
    return SalSampleSet(rec["z"].copy(), rec["target"].copy(), rec["kind"].copy()), head[24:56]
