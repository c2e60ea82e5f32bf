"""Zero level-set extraction on regular grids.

Both extractors are vectorized over cells.  Vertices live on grid edges and
are indexed globally, so neighbouring cells share vertices by index (no
float welding).  Output is oriented toward increasing ``f``: polylines keep
the negative side on their left (counter-clockwise around negative
regions), triangle normals point to the positive side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _mc_tables
from .mlp import MlpConfig, MlpParams, forward

__all__ = [
    "ScalarGrid",
    "Polyline",
    "Mesh",
    "evaluate_grid",
    "mlp_field",
    "default_bounds",
    "marching_squares",
    "marching_cubes",
    "extract_zero_set",
    "polyline_loops",
    "boundary_edges",
    "write_levelset_svg",
]


@dataclass
class ScalarGrid:
    """Samples ``values[i, j(, k)]`` of a field at ``lower + index * spacing``."""

    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        d = self.values.ndim
        if self.lower.shape != (d,) or self.upper.shape != (d,):
            raise ValueError("bounds do not match grid dimension")
        if any(n < 2 for n in self.values.shape):
            raise ValueError(f"resolution must be >= 2 per axis, got {self.values.shape}")
        if not np.all(self.upper > self.lower):
            raise ValueError("degenerate bounds")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.array(self.resolution) - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)


@dataclass
class Polyline:
    """Segment soup: ``vertices`` (M, 2), ``segments`` (S, 2) vertex indices."""

    vertices: np.ndarray
    segments: np.ndarray

    def __len__(self):
        return len(self.segments)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.segments.ravel(), minlength=len(self.vertices))

    def sample(self, n: int, seed=0) -> np.ndarray:
        """Length-uniform points on the segments."""
        a = self.vertices[self.segments[:, 0]]
        b = self.vertices[self.segments[:, 1]]
        length = np.linalg.norm(b - a, axis=1)
        if not length.sum() > 0:
            raise ValueError("polyline has zero length")
        rng = np.random.default_rng(seed)
        s = rng.choice(len(length), size=n, p=length / length.sum())
        t = rng.random(n)[:, None]
        return a[s] + t * (b[s] - a[s])


@dataclass
class Mesh:
    """Triangle mesh: ``vertices`` (M, 3), ``faces`` (F, 3)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __len__(self):
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return np.cross(b - a, c - a)


def default_bounds(points, inflate: float = 0.2):
    """Bounding box of ``points`` grown on every side by ``inflate`` times its largest extent.

    A uniform margin keeps flat or thin data away from the grid border.
    """
    pts = np.asarray(points, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = inflate * max(float(np.max(hi - lo)), 1e-9)
    return lo - pad, hi + pad


def _resolution(res, dim):
    r = (int(res),) * dim if np.isscalar(res) else tuple(int(x) for x in res)
    if len(r) != dim:
        raise ValueError("resolution does not match dimension")
    if any(x < 2 for x in r):
        raise ValueError(f"resolution must be >= 2 per axis, got {r}")
    return r


def evaluate_grid(field: Callable[[np.ndarray], np.ndarray], bounds, resolution, chunk: int = 65536) -> ScalarGrid:
    """Sample ``field`` (``(N, d) -> (N,)``) on the lattice spanning ``bounds``."""
    lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("bounds must be a pair of d-vectors")
    if not np.all(upper > lower):
        raise ValueError("degenerate bounds")
    res = _resolution(resolution, len(lower))
    grid = ScalarGrid(lower, upper, np.zeros(res))
    pts = grid.points()
    vals = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        vals[s:s + chunk] = field(pts[s:s + chunk])
    grid.values = vals.reshape(res)
    return grid


def mlp_field(params: MlpParams, cfg: MlpConfig, latent=None):
    return lambda x: forward(params, cfg, x, latent)


def _interp(pa, pb, va, vb, level):
    t = (level - va) / (vb - va)
    return pa + t[:, None] * (pb - pa)


# --- marching squares -------------------------------------------------------
# Corners in cyclic order c0=(0,0) c1=(1,0) c2=(1,1) c3=(0,1); edge e_k joins
# c_k and c_(k+1).  Case bit k is set when corner k is below the level.

_SQ_CORNERS = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=np.float64)
_SQ_MID = 0.5 * (_SQ_CORNERS + np.roll(_SQ_CORNERS, -1, axis=0))


def _orient(ea, eb, below):
    # the corner closest to the segment lies on its "below" side iff it is below
    p, q = _SQ_MID[ea], _SQ_MID[eb]
    mid = 0.5 * (p + q)
    c = int(np.argmin(np.linalg.norm(_SQ_CORNERS - mid, axis=1)))
    d = q - p
    left = d[0] * (_SQ_CORNERS[c, 1] - p[1]) - d[1] * (_SQ_CORNERS[c, 0] - p[0]) > 0
    return (ea, eb) if left == below[c] else (eb, ea)


def _square_table():
    """``table[case][center_below]`` -> oriented edge pairs."""
    table = []
    for case in range(16):
        below = [(case >> k) & 1 == 1 for k in range(4)]
        cross = [k for k in range(4) if below[k] != below[(k + 1) % 4]]
        opts = []
        for center_below in (False, True):
            if len(cross) == 0:
                segs = []
            elif len(cross) == 2:
                segs = [tuple(cross)]
            else:
                # saddle: the diagonal pair sharing the center sign stays connected
                if below[0] == center_below:
                    segs = [(0, 1), (2, 3)]  # cut off c1 and c3
                else:
                    segs = [(3, 0), (1, 2)]  # cut off c0 and c2
            opts.append([_orient(a, b, below) for a, b in segs])
        table.append(opts)
    return table


_SQ_TABLE = _square_table()


def marching_squares(grid: ScalarGrid, level: float = 0.0, center: Optional[Callable] = None) -> Polyline:
    """Iso-line of a 2D grid by linear interpolation along cell edges.

    Saddle cells take the sign of the field at the cell center: ``center``
    is called with the (K, 2) centers of ambiguous cells, otherwise the mean
    of the four corner values is used.
    """
    if grid.dim != 2:
        raise ValueError("marching_squares needs a 2D grid")
    V = grid.values
    nx, ny = V.shape
    lo, h = grid.lower, grid.spacing
    below = V < level
    b = below.astype(np.int64)
    case = b[:-1, :-1] | (b[1:, :-1] << 1) | (b[1:, 1:] << 2) | (b[:-1, 1:] << 3)
    ci, cj = np.nonzero((case != 0) & (case != 15))
    case = case[ci, cj]
    if len(case) == 0:
        return Polyline(np.zeros((0, 2)), np.zeros((0, 2), dtype=np.int64))

    center_below = np.zeros(len(case), dtype=bool)
    amb = np.flatnonzero((case == 5) | (case == 10))
    if len(amb):
        ai, aj = ci[amb], cj[amb]
        if center is not None:
            cv = np.asarray(center(lo + (np.stack([ai, aj], 1) + 0.5) * h), dtype=np.float64)
        else:
            cv = 0.25 * (V[ai, aj] + V[ai + 1, aj] + V[ai + 1, aj + 1] + V[ai, aj + 1])
        center_below[amb] = cv < level

    # global edge ids: x-edges (nx-1, ny) first, then y-edges (nx, ny-1)
    nxe = (nx - 1) * ny
    ex = lambda i, j: i * ny + j
    ey = lambda i, j: nxe + i * (ny - 1) + j
    cell_edges = np.stack([ex(ci, cj), ey(ci + 1, cj), ex(ci, cj + 1), ey(ci, cj)], axis=1)

    segs = []
    for c in np.unique(case):
        for cb in (False, True):
            sel = np.flatnonzero((case == c) & (center_below == cb))
            if len(sel) == 0:
                continue
            for ea, eb in _SQ_TABLE[c][int(cb)]:
                segs.append(np.stack([cell_edges[sel, ea], cell_edges[sel, eb], sel], axis=1))
    segs = np.concatenate(segs)
    segs = segs[np.argsort(segs[:, 2], kind="stable")][:, :2]

    used, inv = np.unique(segs.ravel(), return_inverse=True)
    is_x = used < nxe
    verts = np.empty((len(used), 2))
    ux = used[is_x]
    i, j = ux // ny, ux % ny
    verts[is_x] = _interp(lo + np.stack([i, j], 1) * h, lo + np.stack([i + 1, j], 1) * h, V[i, j], V[i + 1, j], level)
    uy = used[~is_x] - nxe
    i, j = uy // (ny - 1), uy % (ny - 1)
    verts[~is_x] = _interp(lo + np.stack([i, j], 1) * h, lo + np.stack([i, j + 1], 1) * h, V[i, j], V[i, j + 1], level)
    return Polyline(verts, inv.reshape(-1, 2))


# --- marching cubes ---------------------------------------------------------

def _cube_tables():
    tri = np.full((256, 5, 3), -1, dtype=np.int64)
    count = np.zeros(256, dtype=np.int64)
    for c, edges in enumerate(_mc_tables.TRIANGLES):
        n = len(edges) // 3
        count[c] = n
        if n:
            tri[c, :n] = np.asarray(edges, dtype=np.int64).reshape(n, 3)
    return tri, count


_MC_TRI, _MC_COUNT = _cube_tables()
_MC_CORNERS = np.array(_mc_tables.CORNERS, dtype=np.int64)
_MC_EDGES = np.array(_mc_tables.EDGES, dtype=np.int64)


def marching_cubes(grid: ScalarGrid, level: float = 0.0) -> Mesh:
    """Iso-surface of a 3D grid with the classic 256-case table."""
    if grid.dim != 3:
        raise ValueError("marching_cubes needs a 3D grid")
    V = grid.values
    nx, ny, nz = V.shape
    lo, h = grid.lower, grid.spacing
    below = (V < level).astype(np.int64)
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(_MC_CORNERS):
        case |= below[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz] << bit
    cells = np.nonzero(_MC_COUNT[case] > 0)
    if len(cells[0]) == 0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    case = case[cells]
    cell = np.stack(cells, axis=1)

    # global edge ids per axis block: axis a has shape res with res[a] - 1
    shapes = [(nx - 1, ny, nz), (nx, ny - 1, nz), (nx, ny, nz - 1)]
    offsets = np.cumsum([0] + [int(np.prod(s)) for s in shapes])
    cell_edges = np.empty((len(case), 12), dtype=np.int64)
    for e, (a, b) in enumerate(_MC_EDGES):
        pa, pb = _MC_CORNERS[a], _MC_CORNERS[b]
        axis = int(np.flatnonzero(pa != pb)[0])
        base = cell + np.minimum(pa, pb)
        cell_edges[:, e] = offsets[axis] + np.ravel_multi_index(base.T, shapes[axis])

    tri = _MC_TRI[case]  # (C, 5, 3)
    valid = np.arange(5)[None, :] < _MC_COUNT[case][:, None]
    rows = np.nonzero(valid)
    local = tri[rows]  # (F, 3) local edge numbers, already in cell order
    faces = np.take_along_axis(cell_edges[rows[0]], local, axis=1)

    used, inv = np.unique(faces.ravel(), return_inverse=True)
    verts = np.empty((len(used), 3))
    for axis in range(3):
        sel = (used >= offsets[axis]) & (used < offsets[axis + 1])
        p = np.stack(np.unravel_index(used[sel] - offsets[axis], shapes[axis]), axis=1)
        q = p.copy()
        q[:, axis] += 1
        verts[sel] = _interp(lo + p * h, lo + q * h, V[tuple(p.T)], V[tuple(q.T)], level)
    faces = inv.reshape(-1, 3)
    # the table winds triangles with normals toward the below-level side
    return Mesh(verts, faces[:, ::-1].copy())


def extract_zero_set(grid: ScalarGrid, center: Optional[Callable] = None):
    if grid.dim == 2:
        return marching_squares(grid, 0.0, center)
    return marching_cubes(grid, 0.0)


def polyline_loops(poly: Polyline) -> list:
    """Split a polyline whose vertices all have degree 2 into closed loops."""
    deg = poly.degrees()
    if np.any(deg[np.unique(poly.segments)] != 2):
        raise ValueError("polyline has vertices of degree other than 2")
    nxt = {int(a): int(b) for a, b in poly.segments}
    loops, seen = [], set()
    for start in nxt:
        if start in seen:
            continue
        loop, v = [], start
        while v not in seen:
            seen.add(v)
            loop.append(v)
            v = nxt[v]
        loops.append(loop)
    return loops


def boundary_edges(mesh: Mesh) -> np.ndarray:
    """Undirected edges not shared by exactly two faces."""
    f = mesh.faces
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts != 2]


def write_levelset_svg(
    path,
    grid: ScalarGrid,
    points=None,
    levels: Sequence[float] = (),
    center: Optional[Callable] = None,
    size: int = 512,
):
    """Level-set plot: iso-lines at ``levels``, zero contour in bold, data in gray."""
    if grid.dim != 2:
        raise ValueError("SVG plots need a 2D grid")
    lo, hi = grid.lower, grid.upper
    ext = hi - lo
    s = size / float(ext.max())
    W, H = ext * s

    def xy(p):
        return (p[:, 0] - lo[0]) * s, H - (p[:, 1] - lo[1]) * s

    def path_d(poly):
        if len(poly) == 0:
            return ""
        x, y = xy(poly.vertices)
        return " ".join(f"M{x[a]:.3f},{y[a]:.3f}L{x[b]:.3f},{y[b]:.3f}" for a, b in poly.segments)

    vmax = max(abs(min(levels, default=0.0)), abs(max(levels, default=0.0)), 1e-12)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" viewBox="0 0 {W:.3f} {H:.3f}">',
           f'<rect width="{W:.3f}" height="{H:.3f}" fill="white"/>']
    for lv in levels:
        if lv == 0:
            continue
        # blue for negative levels, red for positive, fading with |level|
        t = min(abs(lv) / vmax, 1.0)
        col = f"rgb({int(255 * (lv > 0))},{int(100 * (1 - t))},{int(255 * (lv < 0))})"
        out.append(f'<path d="{path_d(marching_squares(grid, lv))}" stroke="{col}" stroke-width="1" fill="none"/>')
    out.append(f'<path d="{path_d(marching_squares(grid, 0.0, center))}" stroke="black" stroke-width="3" fill="none"/>')
    if points is not None:
        x, y = xy(np.asarray(points, dtype=np.float64))
        out.extend(f'<circle cx="{a:.3f}" cy="{b:.3f}" r="4" fill="gray"/>' for a, b in zip(x, y))
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
