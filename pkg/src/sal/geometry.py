"""Raw input geometry, nearest-element queries and unsigned distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "TriangleSoup",
    "NearestIndex",
    "point_segment_distance",
    "point_triangle_distance",
    "h2_distance",
    "h0_distance",
    "knn_distance",
    "sample_soup_surface",
    "triangle_areas",
]

# Candidates fetched from the kd-tree before exact re-ranking; guards the
# lowest-index tie rule and ulp-level disagreements with brute force.
_RERANK = 8


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError(f"point cloud must be N x 2 or N x 3, got {pts.shape}")
        if len(pts) == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class TriangleSoup:
    """Unoriented, possibly non-manifold triangles; degenerate ones allowed."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be V x 3, got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must be T x 3, got {t.shape}")
        if len(t) == 0:
            raise ValueError("triangle soup is empty")
        if t.min() < 0 or t.max() >= len(v):
            raise ValueError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("triangle soup has non-finite coordinates")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def dim(self) -> int:
        return 3

    def corners(self):
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def __len__(self):
        return len(self.triangles)


def _dist(a, b):
    # single formula shared with the brute-force oracles in the tests
    return np.sqrt(((a - b) ** 2).sum(axis=-1))


def point_segment_distance(p, a, b):
    """Distance from points ``p`` to segments ``ab`` (broadcasting).

    A zero-length segment degrades to the point ``a``.
    """
    p, a, b = (np.asarray(x, dtype=np.float64) for x in (p, a, b))
    ab = b - a
    denom = (ab * ab).sum(axis=-1)
    t = np.where(denom > 0, ((p - a) * ab).sum(axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return _dist(p, a + t[..., None] * ab)


def point_triangle_distance(p, a, b, c):
    """Exact Euclidean distance from points to triangles (broadcasting).

    If the projection of ``p`` falls inside the triangle the distance is the
    plane distance; otherwise it is the distance to the nearest edge.  Zero
    area triangles therefore reduce to segment (or point) distance.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    n = np.cross(b - a, c - a)
    nn = (n * n).sum(axis=-1)
    edge = np.minimum(
        np.minimum(point_segment_distance(p, a, b), point_segment_distance(p, b, c)),
        point_segment_distance(p, c, a),
    )
    ok = nn > 1e-300
    # projection inside iff it is on the inner side of all three edges
    s0 = (np.cross(b - a, p - a) * n).sum(axis=-1)
    s1 = (np.cross(c - b, p - b) * n).sum(axis=-1)
    s2 = (np.cross(a - c, p - c) * n).sum(axis=-1)
    inside = ok & (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
    plane = np.abs(((p - a) * n).sum(axis=-1)) / np.sqrt(np.where(ok, nn, 1.0))
    return np.where(inside, np.minimum(plane, edge), edge)


def triangle_areas(soup: TriangleSoup) -> np.ndarray:
    a, b, c = soup.corners()
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


class NearestIndex:
    """Nearest-element queries over a point cloud or a triangle soup.

    Points are served by a kd-tree.  Triangles are indexed by their
    centroids: the nearest centroid bounds the true distance from above, and
    every triangle whose centroid lies within that bound plus the largest
    centroid-to-vertex radius is checked exactly.
    """

    def __init__(self, data):
        if isinstance(data, np.ndarray):
            data = PointCloud(data)
        self.data = data
        if isinstance(data, PointCloud):
            self.kind = "points"
            self.points = data.points
            self.tree = cKDTree(self.points)
        elif isinstance(data, TriangleSoup):
            self.kind = "soup"
            a, b, c = data.corners()
            self._a, self._b, self._c = a, b, c
            cen = (a + b + c) / 3.0
            self._radius = float(np.max(np.linalg.norm(np.stack([a, b, c]) - cen, axis=-1)))
            self.tree = cKDTree(cen)
            self.points = cen
        else:
            raise TypeError(f"cannot index {type(data).__name__}")

    @property
    def dim(self) -> int:
        return self.data.dim

    def __len__(self):
        return len(self.points)

    def _check(self, z):
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        Z = np.atleast_2d(z)
        if Z.shape[1] != self.dim:
            raise ValueError(f"query dimension {Z.shape[1]} does not match data dimension {self.dim}")
        return Z, single

    def nearest(self, z):
        """``(distance, index)`` of the nearest element; ties go to the lowest index."""
        Z, single = self._check(z)
        if self.kind == "points":
            k = min(_RERANK, len(self.points))
            _, idx = self.tree.query(Z, k=k)
            idx = idx.reshape(len(Z), k)
            d = _dist(Z[:, None, :], self.points[idx])
            order = np.lexsort((idx, d), axis=1)[:, 0]
            rows = np.arange(len(Z))
            dist, best = d[rows, order], idx[rows, order]
        else:
            dist, best = self._soup_nearest(Z)
        if single:
            return float(dist[0]), int(best[0])
        return dist, best

    def _soup_nearest(self, Z, block=4096):
        dist = np.empty(len(Z))
        best = np.empty(len(Z), dtype=np.int64)
        for s in range(0, len(Z), block):
            zb = Z[s:s + block]
            d_cen, _ = self.tree.query(zb, k=1)
            cands = self.tree.query_ball_point(zb, d_cen + self._radius + 1e-12)
            lens = np.fromiter((len(c) for c in cands), dtype=np.int64, count=len(cands))
            flat = np.fromiter((i for c in cands for i in c), dtype=np.int64, count=int(lens.sum()))
            owner = np.repeat(np.arange(len(zb)), lens)
            d = point_triangle_distance(zb[owner], self._a[flat], self._b[flat], self._c[flat])
            starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
            dmin = np.minimum.reduceat(d, starts)
            hit = d == dmin[owner]
            first = np.full(len(zb), np.iinfo(np.int64).max, dtype=np.int64)
            np.minimum.at(first, owner[hit], flat[hit])
            dist[s:s + block] = dmin
            best[s:s + block] = first
        return dist, best

    def knn(self, x, k: int, exclude_self: bool = False):
        """Distance to the ``k``-th nearest data point (cloud indices only)."""
        if self.kind != "points":
            raise ValueError("knn queries need a point cloud index")
        X, single = self._check(x)
        k = int(k)
        n = len(self.points)
        limit = n - 1 if exclude_self else n
        if k < 1 or k > limit:
            raise ValueError(f"k={k} out of range 1..{limit}")
        kk = k + 1 if exclude_self else k
        d, idx = self.tree.query(X, k=kk)
        d = d.reshape(len(X), kk)
        idx = idx.reshape(len(X), kk)
        d = _dist(X[:, None, :], self.points[idx])
        d.sort(axis=1)
        out = d[:, kk - 1]
        return float(out[0]) if single else out


def h2_distance(index: NearestIndex, z):
    """Unsigned Euclidean distance to the data (point or exact triangle)."""
    d, _ = index.nearest(z)
    return d


def h0_distance(kind):
    """Membership distance: 0 for samples tagged on-surface, 1 otherwise.

    Sample kinds are coded so that the kind byte *is* the distance.
    """
    from .sampling import KIND_SPLAT, KIND_SURFACE

    k = np.asarray(kind)
    if not np.all((k == KIND_SURFACE) | (k == KIND_SPLAT)):
        raise ValueError("unknown sample kind")
    out = (k == KIND_SPLAT).astype(np.float64)
    return float(out) if out.ndim == 0 else out


def knn_distance(index: NearestIndex, x, k: int, exclude_self: bool = True):
    """Distance from ``x`` to its ``k``-th nearest cloud point.

    With ``exclude_self`` the query point is assumed to belong to the cloud
    and one copy of it (at distance zero) is skipped.
    """
    return index.knn(x, k, exclude_self=exclude_self)


def sample_soup_surface(soup: TriangleSoup, n: int, seed=0) -> PointCloud:
    """Area-uniform samples: triangle drawn by area, then uniform barycentric."""
    areas = triangle_areas(soup)
    total = areas.sum()
    if not total > 0:
        raise ValueError("triangle soup has zero total area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    su = np.sqrt(u)
    a, b, c = soup.corners()
    pts = (1 - su)[:, None] * a[tri] + (su * (1 - v))[:, None] * b[tri] + (su * v)[:, None] * c[tri]
    return PointCloud(pts)
