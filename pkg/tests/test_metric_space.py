import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnrdiv import EstimatorError, Metric, brute_force_k_nearest, build_index, k_nearest
from nnrdiv import _backend
from nnrdiv._tree import FlatTree
from nnrdiv.metric_space import load_points


@pytest.fixture
def tiny():
    # Z = {0(X), 2(X), 1(Y), 5(Y)}
    return build_index([[0.0], [2.0]], [[1.0], [5.0]])


def as_tuples(neighbors):
    return [(nb.label, nb.distance, nb.position) for nb in neighbors]


class TestPooledIndex:
    def test_layout(self, tiny):
        assert tiny.n == 2 and tiny.m == 2 and tiny.dim == 1
        assert [tiny.label(i) for i in range(4)] == ["X", "X", "Y", "Y"]
        assert list(tiny.source_index) == [0, 1, 0, 1]
        assert list(tiny.y_positions()) == [2, 3]

    def test_read_only(self, tiny):
        with pytest.raises(ValueError):
            tiny.points[0, 0] = 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(EstimatorError, match="dimension"):
            build_index(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_empty_sample(self):
        with pytest.raises(EstimatorError):
            build_index(np.zeros((0, 2)), np.zeros((3, 2)))

    def test_non_finite(self):
        with pytest.raises(EstimatorError):
            build_index([[0.0], [np.nan]], [[1.0]])

    def test_flat_input_is_one_dimensional_points(self):
        idx = build_index([0.0, 1.0], [1.0])
        assert idx.points.shape == (3, 1)

    def test_three_dimensional_input_rejected(self):
        with pytest.raises(EstimatorError):
            build_index(np.zeros((2, 2, 2)), [[1.0]])


class TestKNearest:
    def test_self_excluded_query_at_one(self, tiny):
        got = k_nearest(tiny, [1.0], 2, exclude=2)
        assert as_tuples(got) == [("X", 1.0, 0), ("X", 1.0, 1)]

    def test_self_excluded_query_at_five(self, tiny):
        got = k_nearest(tiny, [5.0], 2, exclude=3)
        assert as_tuples(got) == [("X", 3.0, 1), ("Y", 4.0, 2)]

    def test_all_points_without_exclusion(self, tiny):
        got = k_nearest(tiny, [1.0], 4)
        assert [nb.position for nb in got] == [2, 0, 1, 3]
        assert [nb.distance for nb in got] == [0.0, 1.0, 1.0, 4.0]

    def test_exclusion_is_by_identity(self):
        # duplicate coordinates: only the excluded position disappears
        idx = build_index([[1.0]], [[1.0], [1.0]])
        got = k_nearest(idx, [1.0], 2, exclude=1)
        assert [nb.position for nb in got] == [0, 2]

    def test_k_too_large(self, tiny):
        with pytest.raises(EstimatorError, match="exceeds"):
            k_nearest(tiny, [1.0], 4, exclude=2)

    @pytest.mark.parametrize("k", [0, -1, 1.5])
    def test_bad_k(self, tiny, k):
        with pytest.raises(EstimatorError):
            k_nearest(tiny, [1.0], k)

    def test_single_candidate(self):
        idx = build_index([[3.0, 4.0]], [[0.0, 0.0]])
        got = k_nearest(idx, [0.0, 0.0], 1, exclude=1)
        assert as_tuples(got) == [("X", 5.0, 0)]

    def test_random_3d_matches_scan(self):
        rng = np.random.default_rng(3)
        idx = build_index(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
        for q in rng.normal(size=(10, 3)):
            assert k_nearest(idx, q, 7) == brute_force_k_nearest(idx, q, 7)

    def test_brute_force_matches_examples(self, tiny):
        assert brute_force_k_nearest(tiny, [5.0], 2, exclude=3) == k_nearest(tiny, [5.0], 2, exclude=3)


class TestMetrics:
    def test_parse(self):
        assert Metric.parse("euclidean").p == 2.0
        assert Metric.parse("Manhattan").p == 1.0
        assert Metric.parse("chebyshev").p == math.inf
        assert Metric.parse("minkowski:3").p == 3.0
        with pytest.raises(EstimatorError):
            Metric.parse("cosine")

    def test_p_below_one_rejected(self):
        with pytest.raises(EstimatorError):
            Metric(0.5)

    def test_distance_values(self):
        a, b = [0.0, 0.0], [3.0, 4.0]
        assert Metric.euclidean().distance(a, b) == 5.0
        assert Metric(1.0).distance(a, b) == 7.0
        assert Metric.chebyshev().distance(a, b) == 4.0
        assert Metric(3.0).distance(a, b) == pytest.approx(91 ** (1 / 3), rel=1e-15)

    def test_custom_metric_uses_scan(self):
        metric = Metric.custom(lambda a, b: float(np.sum(np.abs(a - b))))
        idx = build_index([[0.0, 0.0], [2.0, 2.0]], [[1.0, 0.0], [5.0, 5.0]], metric)
        assert idx.tree is None
        got = k_nearest(idx, [1.0, 0.0], 2, exclude=2)
        assert as_tuples(got) == [("X", 1.0, 0), ("X", 3.0, 1)]

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0, math.inf])
    def test_tree_matches_scan_per_metric(self, p):
        rng = np.random.default_rng(int(p if p < 10 else 11))
        idx = build_index(rng.normal(size=(80, 4)), rng.normal(size=(60, 4)), Metric(p))
        dist, pos = idx.query_y(9)
        for row, q in enumerate(idx.y_positions()):
            ref = brute_force_k_nearest(idx, idx.points[q], 9, exclude=q)
            assert list(pos[row]) == [nb.position for nb in ref]
            assert list(dist[row]) == [nb.distance for nb in ref]


class TestBackends:
    def test_backend_selected(self):
        assert _backend.BACKEND in ("compiled", "python")
        assert _backend.query_batch is _backend.KERNELS[_backend.BACKEND]

    @pytest.mark.skipif("compiled" not in _backend.KERNELS, reason="extension not built")
    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 60), d=st.integers(1, 5), k=st.integers(1, 12),
           p=st.sampled_from([1.0, 2.0, 2.5, math.inf]), seed=st.integers(0, 2**32 - 1),
           grid=st.booleans())
    def test_compiled_equals_fallback(self, n, d, k, p, seed, grid):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n + 5, d))
        if grid:
            pts = np.round(pts * 2) / 2  # many exact ties
        tree = FlatTree(np.ascontiguousarray(pts), leafsize=4)
        queries = np.ascontiguousarray(pts[:5])
        exclude = np.arange(5, dtype=np.int64)
        k = min(k, n + 4)
        a = _backend.KERNELS["compiled"](tree, queries, k, exclude, p)
        b = _backend.KERNELS["python"](tree, queries, k, exclude, p)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestInvariance:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.5, 4.0))
    def test_rigid_motion_and_scaling(self, seed, scale):
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(size=(40, 3)), rng.uniform(size=(40, 3))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        b = rng.normal(size=3)
        before = build_index(x, y).query_y(5)[1]
        after = build_index(scale * x @ q.T + b, scale * y @ q.T + b).query_y(5)[1]
        # labels (not positions) are the invariant; rounding can flip near-ties
        same = np.mean((before < 40).sum(1) == (after < 40).sum(1))
        assert same >= 0.95


class TestLoadPoints:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("a,b\n1.5,2\n-3,4e-1\n")
        np.testing.assert_array_equal(load_points(path, header=True), [[1.5, 2.0], [-3.0, 0.4]])

    def test_single_column(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("0\n2\n")
        assert load_points(path).shape == (2, 1)
