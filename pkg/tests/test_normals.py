"""Normal estimation, affine coefficients, support pairs, orientation."""

import numpy as np
import pytest

from gtvdenoise.bipartite import RED, approximate_bipartite
from gtvdenoise.errors import CollinearityError, NoSupportPairError
from gtvdenoise.graph import build_knn_graph
from gtvdenoise.normals import (
    NormalLinearization,
    SupportPair,
    cross_coefficients,
    estimate_normal_field,
    linearize,
    normal_field_lines,
    orient_normals,
    raw_normal,
    select_support_pair,
    skew,
)


class TestSkewAndCoefficients:
    def test_skew_reproduces_cross_product(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v, x = rng.normal(size=(2, 3))
            np.testing.assert_allclose(skew(v) @ x, np.cross(v, x), atol=1e-12)

    def test_skew_antisymmetric(self):
        S = skew(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(S, -S.T)

    def test_affine_identity_random_triples(self):
        # C p + d must equal the direct cross product everywhere, not just
        # at one linearization point
        rng = np.random.default_rng(1)
        for _ in range(1000):
            p_i, p_k, p_l = rng.normal(size=(3, 3))
            C, d = cross_coefficients(p_k, p_l)
            direct = np.cross(p_i - p_k, p_k - p_l)
            np.testing.assert_allclose(C @ p_i + d, direct, atol=1e-12)


class TestRawNormal:
    def test_unit_length_and_perpendicular(self):
        rng = np.random.default_rng(2)
        p_i, p_k, p_l = rng.normal(size=(3, 3))
        n, C, d, norm = raw_normal(p_i, p_k, p_l)
        assert np.linalg.norm(n) == pytest.approx(1.0)
        assert n @ (p_i - p_k) == pytest.approx(0.0, abs=1e-12)
        assert n @ (p_k - p_l) == pytest.approx(0.0, abs=1e-12)
        assert norm > 0

    def test_known_triangle(self):
        n, *_ = raw_normal([0, 0, 0.0], [1, 0, 0.0], [0, 1, 0.0])
        np.testing.assert_allclose(np.abs(n), [0, 0, 1], atol=1e-12)

    def test_collinear_rejected(self):
        with pytest.raises(CollinearityError):
            raw_normal([0, 0, 0.0], [1, 0, 0.0], [2, 0, 0.0])

    def test_near_collinear_tolerance(self):
        # bend of ~1e-6 rad: passes at tol 1e-8, rejected at tol 1e-3
        p_i = [0.0, 0.0, 0.0]
        p_k = [1.0, 1e-6, 0.0]
        p_l = [2.0, 0.0, 0.0]
        raw_normal(p_i, p_k, p_l, tol=1e-8)
        with pytest.raises(CollinearityError):
            raw_normal(p_i, p_k, p_l, tol=1e-3)


class TestSupportPair:
    def test_distinct_nodes_required(self):
        with pytest.raises(ValueError):
            SupportPair(1, 1, 2)

    def test_nearest_valid_pair_wins(self):
        p_i = np.zeros(3)
        ids = np.array([10, 11, 12])
        pos = np.array([[1, 0, 0], [2, 0, 0], [0, 1, 0.0]])  # 10 and 11 collinear with p_i
        pair = select_support_pair(0, p_i, ids, pos, tol=1e-8)
        assert (pair.k, pair.l) == (10, 12)

    def test_k_advances_when_no_partner_fits(self):
        # all partners of candidate 0 are collinear; candidate 1 pairs with 2
        p_i = np.zeros(3)
        ids = np.array([5, 6, 7])
        pos = np.array([[1, 0, 0], [2, 0, 0], [3, 0, 0.0]])
        with pytest.raises(NoSupportPairError):
            select_support_pair(0, p_i, ids, pos, tol=1e-8)

    def test_too_few_candidates(self):
        with pytest.raises(NoSupportPairError):
            select_support_pair(0, np.zeros(3), np.array([4]), np.ones((1, 3)), 1e-8)


class TestLinearize:
    def test_unit_norm_at_linearization_point(self):
        rng = np.random.default_rng(3)
        p_i, p_k, p_l = rng.normal(size=(3, 3))
        C, d = cross_coefficients(p_k, p_l)
        lin = linearize(p_i, C, d, alpha=1)
        assert np.linalg.norm(lin.A @ p_i + lin.b) == pytest.approx(1.0)
        assert lin.norm_in == pytest.approx(np.linalg.norm(C @ p_i + d))

    def test_alpha_flips_sign(self):
        rng = np.random.default_rng(4)
        p_i, p_k, p_l = rng.normal(size=(3, 3))
        C, d = cross_coefficients(p_k, p_l)
        plus = linearize(p_i, C, d, 1)
        minus = linearize(p_i, C, d, -1)
        np.testing.assert_allclose(plus.A, -minus.A)
        np.testing.assert_allclose(plus.b, -minus.b)

    def test_invalid_alpha(self):
        C, d = cross_coefficients(np.array([1, 0, 0.0]), np.array([0, 1, 0.0]))
        with pytest.raises(ValueError):
            linearize(np.zeros(3), C, d, alpha=0)

    def test_degenerate_point_rejected(self):
        # p on the k-l line: zero cross product
        C, d = cross_coefficients(np.array([1, 0, 0.0]), np.array([2, 0, 0.0]))
        with pytest.raises(CollinearityError):
            linearize(np.array([3.0, 0, 0]), C, d, 1)


class TestOrientation:
    def test_flat_patch_all_agree(self):
        rng = np.random.default_rng(5)
        pos = np.zeros((30, 3))
        pos[:, :2] = rng.uniform(0, 5, size=(30, 2))
        normals = np.tile([0.0, 0, 1], (30, 1))
        normals[::2] *= -1  # scramble signs
        alphas = orient_normals(pos, normals, k=4)
        oriented = normals * alphas[:, None]
        assert np.all(oriented[:, 2] > 0)

    def test_root_points_up(self):
        # single node: sign toward non-negative z
        assert orient_normals(np.zeros((1, 3)), np.array([[0, 0, -1.0]]), 3)[0] == -1
        assert orient_normals(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), 3)[0] == 1

    def test_sphere_patch_outward_consistency(self):
        # normals on a hemisphere cap with random sign flips: after
        # orientation every neighbor pair must agree in sign
        rng = np.random.default_rng(6)
        n = 80
        theta = rng.uniform(0, 0.4 * np.pi, n)
        phi = rng.uniform(0, 2 * np.pi, n)
        dirs = np.column_stack(
            [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
        )
        flips = rng.choice([-1.0, 1.0], size=n)
        alphas = orient_normals(dirs, dirs * flips[:, None], k=6)
        oriented = dirs * (flips * alphas)[:, None]
        # outward means positive dot with the radial direction
        assert np.all(np.sum(oriented * dirs, axis=1) > 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            orient_normals(np.zeros((3, 3)), np.zeros((2, 3)), 2)


class TestEstimateNormalField:
    def _plane_setup(self, n=120, seed=7):
        rng = np.random.default_rng(seed)
        pos = np.zeros((n, 3))
        pos[:, :2] = rng.uniform(0, 10, size=(n, 2))
        graph = build_knn_graph(pos, k=8, sigma_p=1.5)
        bp = approximate_bipartite(graph)
        return pos, graph, bp

    def test_flat_cloud_normals_along_z(self):
        pos, graph, bp = self._plane_setup()
        field, failed = estimate_normal_field(pos, graph, bp.assignment, RED, k=8)
        assert failed == []
        assert len(field.ids) == bp.red.size
        np.testing.assert_allclose(np.abs(field.normals[:, 2]), 1.0, atol=1e-9)
        # oriented consistently: all the same sign
        assert len(np.unique(np.sign(field.normals[:, 2]))) == 1

    def test_support_pairs_come_from_opposite_class(self):
        pos, graph, bp = self._plane_setup()
        field, _ = estimate_normal_field(pos, graph, bp.assignment, RED, k=8)
        for pair in field.pairs:
            assert bp.assignment[pair.node] == RED
            assert bp.assignment[pair.k] != RED
            assert bp.assignment[pair.l] != RED

    def test_linearization_matches_normal(self):
        pos, graph, bp = self._plane_setup(seed=8)
        field, _ = estimate_normal_field(pos, graph, bp.assignment, RED, k=8)
        for t, i in enumerate(field.ids):
            lin = field.lins[t]
            np.testing.assert_allclose(
                lin.A @ pos[i] + lin.b, field.normals[t], atol=1e-12
            )

    def test_global_fallback_when_neighbors_degenerate(self):
        # red node whose only graph-adjacent blues are collinear with it;
        # the global pool must supply a valid pair
        pos = np.array(
            [
                [0.0, 0, 0],    # 0 red target
                [1.0, 0, 0],    # 1 blue, collinear with 0 and 2
                [2.0, 0, 0],    # 2 blue
                [0.0, 3.0, 0],  # 3 blue off-axis, farther away
                [-1.0, 0, 0],   # 4 red
                [0.0, -3.0, 1.0],  # 5 red
            ]
        )
        graph = build_knn_graph(pos, k=2, sigma_p=5.0)
        assignment = np.array([0, 1, 1, 1, 0, 0])
        field, failed = estimate_normal_field(pos, graph, assignment, RED, k=2, tol=1e-6)
        assert 0 not in failed
        t = list(field.ids).index(0)
        assert {field.pairs[t].k, field.pairs[t].l} <= {1, 2, 3}

    def test_all_collinear_reports_failure(self):
        pos = np.zeros((6, 3))
        pos[:, 0] = np.arange(6)  # everything on the x axis
        graph = build_knn_graph(pos, k=2, sigma_p=5.0)
        assignment = np.array([0, 1, 0, 1, 0, 1])
        field, failed = estimate_normal_field(pos, graph, assignment, RED, k=2)
        assert len(field.ids) == 0
        assert sorted(failed) == [0, 2, 4]


def test_normal_field_lines_format():
    pos = np.array([[0, 0, 0.0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.5, 2.0]])
    graph = build_knn_graph(pos, k=3, sigma_p=1.5)
    bp = approximate_bipartite(graph)
    field, _ = estimate_normal_field(pos, graph, bp.assignment, RED, k=3)
    lines = list(normal_field_lines(field))
    assert len(lines) == len(field.ids)
    head = lines[0].split()
    assert len(head) == 7
    assert int(head[0]) == field.ids[0]
    assert head[4] in ("+1", "-1")
