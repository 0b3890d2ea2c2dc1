import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from narrowcap.constructors import (
    collapse_to_point,
    finite_exact_fit,
    multi_class_exact_fit,
    two_class_exact_fit,
)
from narrowcap.errors import NarrowcapError, NoSector, NoSeparation
from narrowcap.geometry import (
    HyperplaneCertificate,
    LabeledDataset,
    PointCloud,
    SectorCertificate,
    find_sector_certificate,
)
from narrowcap.testing import random_sector_instance, random_separable_clouds
from narrowcap.verifier import uuac


def _piecewise_linear(ts, ys, t):
    """Reference interpolant via numpy's own linear interpolation."""
    return np.interp(t, ts, ys)


class TestCollapse:
    def test_worked_example(self):
        hp = HyperplaneCertificate(normal=np.array([1.0, 0.0]), offset=1.0, margin=1.0)
        res = collapse_to_point([[2.0, 0.0]], [[0.0, 0.0]], 0.1, hyperplane=hp)
        np.testing.assert_allclose(res.collapsed_point, [1.95, 0.0], atol=1e-15)
        np.testing.assert_allclose(res.network.forward([0.0, 0.0]), [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(res.network.forward([2.0, 0.0]), [1.95, 0.0], atol=1e-12)

    def test_singleton_lands_within_eps(self):
        k = np.array([[0.3, -1.0, 2.0]])
        res = collapse_to_point(k, [[5.0, 5.0, 5.0], [6.0, 4.0, 5.5]], 0.02)
        assert np.linalg.norm(res.collapsed_point - k[0]) == pytest.approx(0.01, rel=1e-9)
        np.testing.assert_allclose(res.network.forward(k[0]), res.collapsed_point, atol=1e-9)

    def test_shape_of_network(self, rng):
        K, M = random_separable_clouds(rng, 3)
        net = collapse_to_point(K, M, 1e-3).network
        assert net.depth == 2 and net.width == 3
        assert net.hidden_layers[0].activation.kind == "relu"

    def test_eps_capped_at_gap(self):
        res = collapse_to_point([[1.0, 0.0]], [[0.0, 0.0]], 10.0)
        assert res.epsilon <= 1.0
        np.testing.assert_allclose(res.network.forward([0.0, 0.0]), [0.0, 0.0], atol=1e-12)

    def test_inseparable_raises(self):
        with pytest.raises(NoSeparation):
            collapse_to_point([[0.0, 0.0], [1.0, 1.0]], [[0.5, 0.5]], 0.1)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            collapse_to_point([[1.0, 0.0]], [[0.0, 0.0]], 0.0)

    @given(st.integers(0, 10_000), st.integers(2, 4))
    def test_invariants(self, seed, dim):
        r = np.random.default_rng(seed)
        K, M = random_separable_clouds(r, dim)
        eps = 1e-3
        res = collapse_to_point(K, M, eps)
        net, a = res.network, res.collapsed_point
        np.testing.assert_allclose(net.forward(M.points), M.points, atol=1e-9)
        np.testing.assert_allclose(net.forward(K.points), np.broadcast_to(a, K.points.shape), atol=1e-9)
        assert np.linalg.norm(K.points - a, axis=1).min() < eps
        # idempotent on M and on the collapsed point
        probe = np.vstack([M.points, a])
        np.testing.assert_allclose(net.forward(net.forward(probe)), net.forward(probe), atol=1e-9)


class TestTwoClass:
    def test_quadrant(self):
        cert = SectorCertificate(apex=np.zeros(2), frame=np.eye(2))
        net = two_class_exact_fit([[1.0, 1.0]], [[-1.0, -1.0]], cert, 1.0, 0.0)
        assert net.forward([1.0, 1.0])[0] == pytest.approx(1.0, abs=1e-9)
        assert net.forward([-1.0, -1.0])[0] == pytest.approx(0.0, abs=1e-9)

    def test_equal_targets_give_constant(self):
        cert = SectorCertificate(apex=np.zeros(2), frame=np.eye(2))
        net = two_class_exact_fit([[1.0, 1.0]], [[-1.0, -1.0], [3.0, -2.0]], cert, 0.0, 0.0)
        np.testing.assert_array_equal(net.forward(np.random.default_rng(0).normal(size=(20, 2))), 0.0)

    def test_bad_certificate_rejected(self):
        cert = SectorCertificate(apex=np.zeros(2), frame=np.eye(2))
        with pytest.raises(NarrowcapError):
            two_class_exact_fit([[1.0, 1.0]], [[2.0, 2.0]], cert, 1.0, 0.0)

    def test_circle_has_no_sector(self):
        t = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        with pytest.raises(NoSector):
            find_sector_certificate(np.column_stack([np.cos(t), np.sin(t)]), [[0.0, 0.0]], budget=60)

    @given(st.integers(0, 10_000), st.integers(2, 5))
    def test_exact_fit_on_random_instances(self, seed, dim):
        r = np.random.default_rng(seed)
        cert, K1, K2 = random_sector_instance(r, dim, 20, 20)
        a1, a2 = r.uniform(-3, 3, size=2)
        net = two_class_exact_fit(K1, K2, cert, a1, a2)
        assert net.depth == 4 and net.width <= dim
        assert all(l.activation.kind == "relu" for l in net.hidden_layers)
        data = LabeledDataset(np.vstack([K1.points, K2.points]),
                              np.concatenate([np.full(20, a1), np.full(20, a2)]))
        assert uuac(net, data) <= 1e-7


class TestFiniteFit:
    def test_single_point_is_constant(self):
        net = finite_exact_fit([[1.0, 2.0]], [7.0])
        np.testing.assert_array_equal(net.forward(np.array([[0.0, 0.0], [5.0, -3.0]]))[:, 0], [7.0, 7.0])

    def test_two_points_affine(self):
        net = finite_exact_fit([[0.0, 0.0], [1.0, 1.0]], [1.0, 3.0])
        assert net.depth == 1
        np.testing.assert_allclose(net.forward([[0.0, 0.0], [1.0, 1.0]])[:, 0], [1.0, 3.0], atol=1e-12)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            finite_exact_fit([[1.0], [1.0], [2.0]], [0.0, 1.0, 2.0])

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            finite_exact_fit([[1.0], [2.0]], [0.0])

    def test_one_dimensional_matches_interpolant_between_samples(self, rng):
        ts = np.sort(rng.uniform(-2, 2, 6))
        ys = rng.uniform(-1, 1, 6)
        net = finite_exact_fit(ts[:, None], ys)
        grid = np.linspace(ts[0], ts[-1], 400)
        np.testing.assert_allclose(net.forward(grid[:, None])[:, 0], _piecewise_linear(ts, ys, grid), atol=1e-9)

    def test_depth_grows_with_breakpoints(self, rng):
        X = rng.normal(size=(5, 3))
        net = finite_exact_fit(X, rng.uniform(-1, 1, 5))
        assert net.width == 2
        assert net.depth == 5 - 1

    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 8))
    def test_exact_and_narrow(self, seed, dim, m):
        r = np.random.default_rng(seed)
        X = r.normal(size=(m, dim))
        y = r.uniform(-1, 1, m)
        net = finite_exact_fit(X, y, seed=seed)
        assert net.width <= 2
        np.testing.assert_allclose(net.forward(X)[:, 0], y, atol=1e-7)


class TestMultiClass:
    def test_two_components_match_values(self):
        net = multi_class_exact_fit([(PointCloud([[1.0, 1.0], [1.2, 0.9]]), 1.0),
                                     (PointCloud([[-1.0, -1.0]]), 0.0)])
        np.testing.assert_allclose(net.forward([[1.0, 1.0], [1.2, 0.9], [-1.0, -1.0]])[:, 0],
                                   [1.0, 1.0, 0.0], atol=1e-7)

    def test_three_collinear_clusters(self, rng):
        comps = [(PointCloud(rng.normal(scale=0.2, size=(15, 2)) + [4.0 * j, 0.0]), float(j))
                 for j in range(3)]
        net = multi_class_exact_fit(comps)
        assert net.width <= 2
        for cloud, value in comps:
            np.testing.assert_allclose(net.forward(cloud.points)[:, 0], value, atol=1e-7)

    def test_shared_point_fails(self):
        with pytest.raises(NoSeparation):
            multi_class_exact_fit([(PointCloud([[0.0, 0.0], [1.0, 0.0]]), 0.0),
                                   (PointCloud([[0.0, 0.0], [0.0, 1.0]]), 1.0)])

    def test_one_dimension_rejected(self):
        with pytest.raises(ValueError):
            multi_class_exact_fit([(PointCloud([[0.0]]), 0.0), (PointCloud([[1.0]]), 1.0)])

    def test_four_clusters_in_three_dims(self, rng):
        centres = rng.normal(scale=5.0, size=(4, 3))
        comps = [(PointCloud(c + rng.normal(scale=0.1, size=(10, 3))), float(j)) for j, c in enumerate(centres)]
        net = multi_class_exact_fit(comps)
        assert net.width <= 3
        for cloud, value in comps:
            np.testing.assert_allclose(net.forward(cloud.points)[:, 0], value, atol=1e-7)
