"""Chamfer distances and percentile summaries.

Chamfer here is the mean over one set of the (unsquared) Euclidean distance
to the nearest point of the other set.  The symmetric value is the mean of
the two one-sided values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .contouring import Mesh, Polyline
from .geometry import NearestIndex, PointCloud, TriangleSoup, sample_soup_surface

__all__ = [
    "chamfer_one_sided",
    "chamfer_symmetric",
    "ChamferReport",
    "PercentileSummary",
    "chamfer_report",
    "mesh_to_eval_cloud",
    "percentile_report",
    "format_table",
    "to_csv",
]


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else PointCloud(x).points


def chamfer_one_sided(a, b) -> float:
    """Mean over ``a`` of the distance to the nearest point of ``b``."""
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("point sets have different dimensions")
    d, _ = NearestIndex(PointCloud(pb)).nearest(pa)
    return float(np.mean(d))


def chamfer_symmetric(a, b) -> float:
    return 0.5 * (chamfer_one_sided(a, b) + chamfer_one_sided(b, a))


@dataclass(frozen=True)
class ChamferReport:
    one_sided_a_to_b: float
    one_sided_b_to_a: float

    @property
    def symmetric(self) -> float:
        return 0.5 * (self.one_sided_a_to_b + self.one_sided_b_to_a)


def chamfer_report(a, b) -> ChamferReport:
    return ChamferReport(chamfer_one_sided(a, b), chamfer_one_sided(b, a))


@dataclass(frozen=True)
class PercentileSummary:
    p5: float
    p50: float
    p95: float
    n: int
    scale: float


def percentile_report(values: Sequence[float], scale: float = 1e3) -> PercentileSummary:
    """5th/50th/95th percentiles (linear interpolation), multiplied by ``scale``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if len(v) == 0:
        raise ValueError("no values to summarize")
    p5, p50, p95 = np.percentile(v, [5, 50, 95], method="linear")
    return PercentileSummary(float(p5 * scale), float(p50 * scale), float(p95 * scale), len(v), scale)


def mesh_to_eval_cloud(mesh, n: int = 30000, seed=0) -> PointCloud:
    """Area-uniform samples of a mesh (or length-uniform samples of a 2D polyline)."""
    if isinstance(mesh, Polyline):
        if len(mesh) == 0:
            raise ValueError("empty polyline")
        return PointCloud(mesh.sample(n, seed))
    if isinstance(mesh, Mesh):
        if len(mesh) == 0:
            raise ValueError("empty mesh")
        mesh = TriangleSoup(mesh.vertices, mesh.faces)
    return sample_soup_surface(mesh, n, seed)


def to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def format_table(rows: Sequence[dict], floatfmt: str = ".4f") -> str:
    """Plain fixed-width table."""
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[format(r[c], floatfmt) if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))
    return "\n".join([line(cols), line(["-" * w for w in widths])] + [line(r) for r in cells])
