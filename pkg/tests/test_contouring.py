from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sal import _mc_tables
from sal.contouring import (
    Mesh,
    Polyline,
    ScalarGrid,
    boundary_edges,
    default_bounds,
    evaluate_grid,
    extract_zero_set,
    marching_cubes,
    marching_squares,
    mlp_field,
    polyline_loops,
    write_levelset_svg,
)
from sal.mlp import MlpConfig, forward, geometric_init

radial = lambda x: np.linalg.norm(x, axis=1) - 1.0


def signed_area(poly):
    a, b = poly.vertices[poly.segments[:, 0]], poly.vertices[poly.segments[:, 1]]
    return 0.5 * np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def directed_edges_consistent(mesh):
    f = mesh.faces
    e = Counter(map(tuple, np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])))
    return all(n == 1 and e.get((b, a), 0) == 1 for (a, b), n in e.items())


def noise_grid(seed, n=8):
    V = np.random.default_rng(seed).standard_normal((n, n, n))
    V[[0, -1]] = V[:, [0, -1]] = V[:, :, [0, -1]] = 1.0
    return ScalarGrid(np.zeros(3), np.ones(3), V)


class TestGrid:
    def test_evaluate_grid_layout(self):
        g = evaluate_grid(lambda x: x[:, 0] + 10 * x[:, 1], ([0, 0], [1, 2]), (3, 5))
        assert g.values.shape == (3, 5)
        assert g.values[2, 4] == pytest.approx(21.0)
        np.testing.assert_allclose(g.spacing, [0.5, 0.5])
        assert g.cell_diagonal == pytest.approx(np.sqrt(0.5))

    def test_resolution_too_small(self):
        with pytest.raises(ValueError):
            evaluate_grid(radial, ([0, 0], [1, 1]), 1)

    def test_default_bounds(self):
        lo, hi = default_bounds(np.array([[0.0, 0.0], [2.0, 1.0]]))
        np.testing.assert_allclose(lo, [-0.4, -0.4])
        np.testing.assert_allclose(hi, [2.4, 1.4])

    def test_mlp_field(self, rng):
        cfg = MlpConfig.standard(2, 3, 8)
        p = geometric_init(cfg)
        x = rng.standard_normal((4, 2))
        np.testing.assert_array_equal(mlp_field(p, cfg)(x), forward(p, cfg, x))


class TestMarchingSquares:
    def test_circle(self):
        g = evaluate_grid(radial, ([-2, -2], [2, 2]), 64)
        p = marching_squares(g, 0.0, radial)
        assert np.all(p.degrees() == 2)
        assert np.abs(np.linalg.norm(p.vertices, axis=1) - 1).max() < g.cell_diagonal
        assert len(polyline_loops(p)) == 1
        # negative inside on the left: counter-clockwise traversal
        assert signed_area(p) == pytest.approx(np.pi, rel=0.01)

    def test_level(self):
        g = evaluate_grid(radial, ([-2, -2], [2, 2]), 64)
        p = marching_squares(g, 0.5)
        np.testing.assert_allclose(np.linalg.norm(p.vertices, axis=1), 1.5, atol=0.01)

    def test_two_components(self):
        f = lambda x: np.minimum(np.linalg.norm(x - [1, 0], axis=1), np.linalg.norm(x + [1, 0], axis=1)) - 0.5
        p = marching_squares(evaluate_grid(f, ([-2, -1], [2, 1]), 64), 0.0, f)
        assert len(polyline_loops(p)) == 2

    def test_linear_field_vertices_exact(self):
        f = lambda x: x[:, 0] + 0.3 * x[:, 1] - 0.1
        p = marching_squares(evaluate_grid(f, ([-1, -1], [1, 1]), 9))
        np.testing.assert_allclose(f(p.vertices), 0.0, atol=1e-14)

    @pytest.mark.parametrize("center_value, cut_corners", [(-1.0, [(1, 0), (0, 1)]), (1.0, [(0, 0), (1, 1)])])
    def test_saddle(self, center_value, cut_corners):
        g = ScalarGrid(np.zeros(2), np.ones(2), np.array([[-1.0, 1.0], [1.0, -1.0]]))
        p = marching_squares(g, 0.0, lambda x: np.full(len(x), center_value))
        assert len(p.segments) == 2
        # each segment midpoint sits a quarter diagonal from the corner it cuts off
        mids = p.vertices[p.segments].mean(axis=1)
        assert sorted(map(tuple, np.round(mids).astype(int).tolist())) == sorted(cut_corners)
        # each segment has the cell center on its left iff the center is negative
        for a, b in p.vertices[p.segments]:
            d, c = b - a, np.array([0.5, 0.5]) - a
            assert (d[0] * c[1] - d[1] * c[0] > 0) == (center_value < 0)

    def test_saddle_default_uses_corner_mean(self):
        g = ScalarGrid(np.zeros(2), np.ones(2), np.array([[-3.0, 1.0], [1.0, -3.0]]))
        p = marching_squares(g)
        mids = p.vertices[p.segments].mean(axis=1)
        # mean is negative: the positive corners are cut off
        assert sorted(np.round(mids).astype(int).tolist()) == [[0, 1], [1, 0]]

    def test_empty(self):
        p = marching_squares(evaluate_grid(lambda x: np.ones(len(x)), ([0, 0], [1, 1]), 4))
        assert len(p) == 0

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            marching_squares(noise_grid(0))

    def test_loops_reject_open(self):
        with pytest.raises(ValueError):
            polyline_loops(Polyline(np.zeros((3, 2)), np.array([[0, 1], [1, 2]])))


class TestMarchingCubes:
    def test_sphere(self):
        g = evaluate_grid(radial, ([-2] * 3, [2] * 3), 32)
        m = marching_cubes(g)
        assert np.abs(np.linalg.norm(m.vertices, axis=1) - 1).max() < g.cell_diagonal
        assert len(boundary_edges(m)) == 0
        assert directed_edges_consistent(m)
        n = m.face_normals()
        c = m.vertices[m.faces].mean(axis=1)
        assert np.all(np.sum(n * c, axis=1) > 0)

    def test_table_shape(self):
        assert len(_mc_tables.TRIANGLES) == 256
        assert all(len(t) % 3 == 0 and len(t) <= 15 for t in _mc_tables.TRIANGLES)
        assert _mc_tables.TRIANGLES[0] == () and _mc_tables.TRIANGLES[255] == ()

    def test_table_edges_cross_sign_change(self):
        for case, tri in enumerate(_mc_tables.TRIANGLES):
            below = [(case >> c) & 1 for c in range(8)]
            crossing = {e for e, (a, b) in enumerate(_mc_tables.EDGES) if below[a] != below[b]}
            assert set(tri) == crossing, case

    def test_table_complement_symmetry(self):
        # a case and its complement cut the same edges
        for case in range(256):
            assert set(_mc_tables.TRIANGLES[case]) == set(_mc_tables.TRIANGLES[255 - case])

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_noise_fields_watertight_and_oriented(self, seed):
        m = marching_cubes(noise_grid(seed))
        assert len(boundary_edges(m)) == 0
        assert directed_edges_consistent(m)

    def test_extract_dispatch(self):
        g3 = evaluate_grid(radial, ([-2] * 3, [2] * 3), 8)
        assert isinstance(extract_zero_set(g3), Mesh)
        g2 = evaluate_grid(radial, ([-2] * 2, [2] * 2), 8)
        assert isinstance(extract_zero_set(g2), Polyline)


class TestPolylineSampling:
    def test_samples_on_segments(self):
        g = evaluate_grid(radial, ([-2, -2], [2, 2]), 64)
        p = marching_squares(g)
        s = p.sample(5000, seed=1)
        assert s.shape == (5000, 2)
        assert np.abs(np.linalg.norm(s, axis=1) - 1).max() < g.cell_diagonal


class TestSvg:
    def test_writes_paths(self, tmp_path):
        g = evaluate_grid(radial, ([-2, -2], [2, 2]), 32)
        write_levelset_svg(tmp_path / "a.svg", g, points=np.zeros((2, 2)), levels=(-0.5, 0.5))
        text = (tmp_path / "a.svg").read_text()
        assert text.startswith("<svg") or text.startswith("<?xml")
        assert text.count("<path") >= 3 and "<circle" in text

    def test_rejects_3d(self, tmp_path):
        with pytest.raises(ValueError):
            write_levelset_svg(tmp_path / "a.svg", noise_grid(0))
