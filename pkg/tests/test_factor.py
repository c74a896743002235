import math

import numpy as np
import pytest

import palmlab as pl
from palmlab.errors import PreconditionError, UsageError
from palmlab.factor import (BINARY_MARKS, MINUS, PLUS,
                            nearest_neighbor_indices, project_output,
                            retained_marks_thinning)
from palmlab.process import MarkedConfiguration
from palmlab.rng import trial_rng

TORUS = pl.FlatTorus(2, 10.0)
T1 = pl.FlatTorus(1, 10.0)
FULL = TORUS.full_window()


def torus_config(points, carrier=None):
    carrier = carrier or TORUS
    return pl.Configuration(carrier, carrier.full_window(), np.asarray(points, dtype=float))


def naive_torus_distance(x, y, L):
    """Independent oracle: minimum over the 3^d lattice translates."""
    d = len(x)
    best = math.inf
    for off in np.ndindex(*([3] * d)):
        shift = (np.asarray(off) - 1) * L
        best = min(best, float(np.linalg.norm(np.asarray(x) + shift - np.asarray(y))))
    return best


def naive_torus_distance_matrix(pts, L):
    """All-pairs version of the translate-enumeration oracle."""
    n, d = pts.shape
    best = np.full((n, n), math.inf)
    for off in np.ndindex(*([3] * d)):
        shift = (np.asarray(off) - 1.0) * L
        diff = pts[:, None, :] + shift - pts[None, :, :]
        best = np.minimum(best, np.sqrt((diff ** 2).sum(-1)))
    np.fill_diagonal(best, math.inf)
    return best


def sample(i, t=0.5, exp="factor"):
    return pl.sample_poisson(TORUS, FULL, t, trial_rng(10, exp, i))


def random_g(i, exp="factor-g"):
    return TORUS.sample_uniform(FULL, trial_rng(11, exp, i))


def index_permutation(c, translated, g):
    """Map index in c to index in translate(c, g) via exact row matching."""
    moved = TORUS.wrap(c.points + g)
    return np.asarray([translated.index_of(row) for row in moved], dtype=int)


class TestDeltaThinning:
    def test_singleton_unchanged(self):
        c = torus_config([[4.0, 4.0]])
        assert pl.delta_thinning(c, 0.5) == c

    def test_close_pair_removed(self):
        c = torus_config([[0.0], [0.3]], carrier=T1)
        assert pl.delta_thinning(c, 0.5).n == 0

    def test_isolated_survivor(self):
        c = torus_config([[0.0], [0.3], [5.0]], carrier=T1)
        out = pl.delta_thinning(c, 0.5)
        assert np.array_equal(out.points, [[5.0]])

    def test_against_naive_oracle(self):
        for i in range(100):
            c = sample(i)
            if c.n < 2:
                continue
            dmat = naive_torus_distance_matrix(c.points, 10.0)
            keep = dmat.min(axis=1) > 0.5
            assert np.array_equal(pl.delta_thinning(c, 0.5).points, c.points[keep])

    def test_range_guard(self):
        with pytest.raises(UsageError):
            pl.delta_thinning(sample(0), 2.6)


class TestIndependentThinning:
    def test_p_one_keeps_everything(self):
        rng = trial_rng(12, "ind", 0)
        c = sample(1)
        mc = pl.attach_iid_marks(c, pl.UNIT_INTERVAL, rng)
        assert pl.independent_thinning(mc, 1.0) == c

    def test_p_zero_empties(self):
        rng = trial_rng(12, "ind", 1)
        mc = pl.attach_iid_marks(sample(2), pl.UNIT_INTERVAL, rng)
        assert pl.independent_thinning(mc, 0.0).n == 0

    def test_wrong_mark_space(self):
        mc = pl.attach_iid_marks(sample(3), (0, 1), trial_rng(12, "ind", 2))
        with pytest.raises(UsageError):
            pl.independent_thinning(mc, 0.5)

    def test_thinned_intensity(self):
        # p-thinning of Poisson(t) has intensity p * t
        t, p, trials = 2.0, 0.25, 2000
        total = 0
        for i in range(trials):
            rng = trial_rng(12, "ind-int", i)
            cfg = pl.sample_poisson(TORUS, FULL, t, rng)
            mc = pl.attach_iid_marks(cfg, pl.UNIT_INTERVAL, rng)
            total += pl.independent_thinning(mc, p).n
        est = total / (trials * 100.0)
        se = math.sqrt(p * t / (trials * 100.0))
        assert abs(est - p * t) <= 3.0 * se


class TestConstantThickening:
    def test_identity_only(self):
        c = sample(4)
        assert pl.constant_thickening(c, [TORUS.identity()]) == c

    def test_single_point(self):
        c = torus_config([[2.0, 2.0]])
        f = np.array([0.5, 0.0])
        out = pl.constant_thickening(c, [TORUS.identity(), f])
        assert np.array_equal(out.points, [[2.0, 2.0], [2.5, 2.0]])

    def test_cardinality_ratio_exact(self):
        fset = [TORUS.identity(), np.array([0.1, 0.0]), np.array([0.0, 0.1])]
        for i in range(50):
            base = pl.delta_thinning(sample(i, t=1.0), 0.5)
            if base.n == 0:
                continue
            assert pl.constant_thickening(base, fset).n == 3 * base.n

    def test_identity_required(self):
        with pytest.raises(UsageError):
            pl.constant_thickening(sample(5), [np.array([0.1, 0.0])])

    def test_separation_violation_named(self):
        c = torus_config([[0.0, 0.0], [0.5, 0.0]])
        with pytest.raises(PreconditionError) as err:
            pl.constant_thickening(c, [TORUS.identity(), np.array([0.5, 0.0])])
        assert "0.5" in str(err.value)


class TestFSeparation:
    def test_identity_always_separated(self):
        assert pl.check_F_separated(sample(6), [TORUS.identity()])

    def test_collision_detected(self):
        c = torus_config([[0.0, 0.0], [0.5, 0.0]])
        assert not pl.check_F_separated(c, [TORUS.identity(), np.array([0.5, 0.0])])

    def test_thinned_is_separated_by_triangle_inequality(self):
        # delta > 2 max |f| forces separation: if x f = y then d(x, y) <= |f|
        fset = [TORUS.identity(), np.array([0.2, 0.0]), np.array([0.0, 0.15])]
        max_f = max(float(np.linalg.norm(f)) for f in fset)
        delta = 0.5
        assert delta > 2 * max_f
        for i in range(100):
            thin = pl.delta_thinning(sample(i, t=1.0), delta)
            assert pl.check_F_separated(thin, fset)


class TestThinningFromSet:
    def test_always_true_keeps_all(self):
        ev = pl.LocalEvent(radius=1.0, fn=lambda view: True)
        c = sample(7)
        assert pl.thinning_from_set(c, ev) == c

    def test_reproduces_delta_thinning_bit_exact(self):
        delta = 0.5
        ev = pl.LocalEvent(radius=delta, fn=lambda view: (
            len(view.others()) == 0 or view.distances_from_root().min() > delta))
        for i in range(100):
            c = sample(i, t=1.0)
            assert pl.thinning_from_set(c, ev) == pl.delta_thinning(c, delta)

    def test_crowding_event_against_brute_force(self):
        # at least two other points within distance 1 of the root
        ev = pl.LocalEvent(radius=1.0, fn=lambda view: (
            (view.distances_from_root() <= 1.0).sum() >= 2))
        for i in range(100):
            c = sample(i, t=1.0)
            if c.n == 0:
                continue
            dmat = naive_torus_distance_matrix(c.points, 10.0)
            keep = (dmat <= 1.0).sum(axis=1) >= 2
            assert np.array_equal(pl.thinning_from_set(c, ev).points, c.points[keep])

    def test_requires_declared_radius(self):
        with pytest.raises(UsageError):
            pl.thinning_from_set(sample(8), lambda view: True)

    def test_radius_range_guard(self):
        ev = pl.LocalEvent(radius=2.6, fn=lambda view: True)
        with pytest.raises(UsageError):
            pl.thinning_from_set(sample(8), ev)


class TestMarking:
    def test_constant_marks(self):
        mm = pl.LocalMark(radius=0.5, fn=lambda view: 7)
        mc = pl.marking_from_map(sample(9), mm)
        assert all(m == 7 for m in mc.marks.tolist())

    def test_indicator_reproduces_thinning(self):
        delta = 0.5
        ev_fn = lambda view: (len(view.others()) == 0 or
                              view.distances_from_root().min() > delta)
        mm = pl.LocalMark(radius=delta, fn=lambda view: int(ev_fn(view)))
        for i in range(50):
            c = sample(i, t=1.0)
            mc = pl.marking_from_map(c, mm)
            assert retained_marks_thinning(mc, 1) == pl.delta_thinning(c, delta)

    def test_equivariance_bit_exact(self):
        mm = pl.LocalMark(radius=1.0, fn=lambda view: int(
            (view.distances_from_root() <= 1.0).sum()))
        for i in range(200):
            c = sample(i, t=1.0)
            if c.n == 0:
                continue
            g = random_g(i)
            translated = pl.translate(c, g)
            left = pl.marking_from_map(translated, mm)
            right = pl.marking_from_map(c, mm)
            perm = index_permutation(c, translated, g)
            expect = np.empty(c.n, dtype=int)
            expect[perm] = np.asarray(right.marks)
            assert np.array_equal(np.asarray(left.marks), expect)


class TestGraphs:
    def test_empty_rule_edgeless(self):
        rule = pl.ArrowRule(radius=1.0, fn=lambda view, rel: False)
        g = pl.graph_from_arrow_set(sample(10, t=1.0), rule)
        assert g.n_edges == 0

    def test_arrow_rule_reproduces_distance_R(self):
        R = 1.0
        rule = pl.ArrowRule(radius=R, fn=lambda view, rel: True)
        for i in range(50):
            c = sample(i, t=1.0)
            assert pl.graph_from_arrow_set(c, rule) == pl.distance_R_graph(c, R)

    def test_distance_R_collinear_path(self):
        c = torus_config([[1.0], [2.0], [3.0]], carrier=T1)
        g = pl.distance_R_graph(c, 1.0)
        assert g.edges.tolist() == [[0, 1], [1, 0], [1, 2], [2, 1]]

    def test_distance_R_below_minimum_gap(self):
        c = torus_config([[1.0], [4.0], [8.0]], carrier=T1)
        assert pl.distance_R_graph(c, 0.5).n_edges == 0

    def test_distance_R_against_naive(self):
        R = 1.5
        for i in range(50):
            c = sample(i, t=1.0)
            if c.n == 0:
                continue
            g = pl.distance_R_graph(c, R)
            dmat = naive_torus_distance_matrix(c.points, 10.0)
            edges = {(a, b) for a, b in zip(*np.where(dmat <= R))}
            assert set(map(tuple, g.edges.tolist())) == edges

    def test_nn_digraph_two_points(self):
        c = torus_config([[1.0, 1.0], [2.0, 2.0]])
        g = pl.nearest_neighbor_digraph(c)
        assert set(map(tuple, g.edges.tolist())) == {(0, 1), (1, 0)}

    def test_nn_digraph_out_degree_one(self):
        for i in range(50):
            c = sample(i, t=1.0)
            if c.n < 2:
                continue
            g = pl.nearest_neighbor_digraph(c)
            assert np.array_equal(g.out_degrees(), np.ones(c.n, dtype=int))

    def test_nn_digraph_against_naive(self):
        for i in range(100):
            c = sample(i, t=1.0)
            if c.n < 2:
                continue
            nn = nearest_neighbor_indices(c)
            dmat = naive_torus_distance_matrix(c.points, 10.0)
            rows = np.arange(c.n)
            assert np.allclose(dmat[rows, nn], dmat.min(axis=1), atol=1e-12)

    def test_nn_digraph_needs_two_points(self):
        with pytest.raises(UsageError):
            pl.nearest_neighbor_digraph(torus_config([[1.0, 1.0]]))

    def test_distance_R_connected_above_percolation_scale(self):
        # R = 2 sits far above the desk-scale connectivity threshold at t = 1;
        # connectivity is asserted per sample on the finite torus
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components
        rule_R = 2.0
        for i in range(50):
            c = sample(i, t=1.0, exp="factor-conn")
            if c.n < 2:
                continue
            g = pl.distance_R_graph(c, rule_R)
            rows, cols = g.edges[:, 0], g.edges[:, 1]
            adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(c.n, c.n))
            n_comp, _ = connected_components(adj, directed=False)
            assert n_comp == 1

    def test_graph_equivariance_bit_exact(self):
        rule = pl.ArrowRule(radius=1.5, fn=lambda view, rel: bool(
            view.carrier.distance(view.carrier.identity(), rel) <= 1.5))
        for i in range(100):
            c = sample(i, t=1.0)
            if c.n == 0:
                continue
            g = random_g(i)
            translated = pl.translate(c, g)
            left = pl.graph_from_arrow_set(translated, rule)
            right = pl.graph_from_arrow_set(c, rule)
            perm = index_permutation(c, translated, g)
            mapped = sorted((int(perm[a]), int(perm[b])) for a, b in right.edges)
            assert mapped == sorted(map(tuple, left.edges.tolist()))


class TestVoronoi:
    def test_singleton_owns_everything(self):
        c = torus_config([[4.0, 4.0]])
        vp = pl.voronoi_partition(c, 10.0 / 64)
        assert vp.volumes()[0] == pytest.approx(100.0)

    def test_volumes_sum_exactly(self):
        for i in range(20):
            c = sample(i, t=1.0)
            if c.n == 0:
                continue
            vp = pl.voronoi_partition(c, 10.0 / 128)
            assert vp.volumes().sum() == 100.0

    def test_antipodal_split(self):
        c = torus_config([[2.5, 5.0], [7.5, 5.0]])
        h = 10.0 / 128
        vols = pl.voronoi_partition(c, h).volumes()
        assert abs(vols[0] - 50.0) <= h * 10.0 + 1e-9
        assert vols.sum() == 100.0

    def test_lexicographic_tie_break(self):
        # with a 5-cell axis the center cell is equidistant to both points
        c = torus_config([[2.5], [7.5]], carrier=T1)
        vp = pl.voronoi_partition(c, 2.0)
        # centers: 1, 3, 5, 7, 9; center 5 ties and goes to the smaller point
        assert vp.owner.tolist() == [0, 0, 0, 1, 1]

    def test_empty_configuration_rejected(self):
        with pytest.raises(UsageError):
            pl.voronoi_partition(torus_config(np.empty((0, 2))), 10.0 / 64)

    def test_grid_must_divide(self):
        with pytest.raises(UsageError):
            pl.voronoi_partition(sample(11, t=1.0), 3.0)


class TestInputOutputDecomposition:
    def test_identity_all_purple(self):
        c = sample(12, t=1.0)
        mc = pl.input_output_decomposition(lambda x: x, c)
        assert all(m == "purple" for m in mc.marks.tolist())
        assert project_output(mc) == c

    def test_empty_map_all_red(self):
        c = sample(13, t=1.0)
        empty = pl.Configuration(TORUS, FULL, np.empty((0, 2)))
        mc = pl.input_output_decomposition(lambda x: empty, c)
        assert all(m == "red" for m in mc.marks.tolist())
        assert project_output(mc).n == 0

    def test_thinning_decomposition(self):
        for i in range(100):
            c = sample(i, t=1.0)
            phi = lambda cfg: pl.delta_thinning(cfg, 0.5)
            mc = pl.input_output_decomposition(phi, c)
            out = phi(c)
            out_keys = {row.tobytes() for row in out.points}
            for row, mark in zip(mc.base.points, mc.marks.tolist()):
                assert mark == ("purple" if row.tobytes() in out_keys else "red")
            assert "blue" not in mc.marks.tolist()
            assert project_output(mc) == out

    def test_thickening_decomposition_has_blue(self):
        base = pl.delta_thinning(sample(14, t=1.0), 0.5)
        fset = [TORUS.identity(), np.array([0.1, 0.0])]
        phi = lambda cfg: pl.constant_thickening(cfg, fset)
        mc = pl.input_output_decomposition(phi, base)
        marks = mc.marks.tolist()
        assert marks.count("blue") == base.n and marks.count("purple") == base.n
        assert project_output(mc) == phi(base)


class TestLocalEncoding:
    def _marked(self, i, delta=0.5):
        base = pl.delta_thinning(sample(i, t=1.0), delta)
        rng = trial_rng(13, "enc", i)
        marks = np.asarray([PLUS if b else MINUS
                            for b in rng.integers(0, 2, base.n)], dtype=object)
        return MarkedConfiguration(base, marks, BINARY_MARKS)

    def test_empty(self):
        base = torus_config(np.empty((0, 2)))
        mc = MarkedConfiguration(base, np.empty(0, dtype=object), BINARY_MARKS)
        out = pl.local_encode_marks(mc, 0.5)
        assert out.n == 0
        back = pl.local_decode_marks(out, 0.5)
        assert back.n == 0

    def test_single_plus(self):
        base = torus_config([[5.0, 5.0]])
        mc = MarkedConfiguration(base, np.asarray([PLUS], dtype=object), BINARY_MARKS)
        out = pl.local_encode_marks(mc, 0.5)
        assert out.n == 5
        back = pl.local_decode_marks(out, 0.5)
        assert back == mc

    def test_single_minus(self):
        base = torus_config([[5.0, 5.0]])
        mc = MarkedConfiguration(base, np.asarray([MINUS], dtype=object), BINARY_MARKS)
        out = pl.local_encode_marks(mc, 0.5)
        assert out.n == 3
        assert pl.local_decode_marks(out, 0.5) == mc

    def test_round_trip_bit_exact(self):
        for i in range(100):
            mc = self._marked(i)
            out = pl.local_encode_marks(mc, 0.5)
            assert out.n == mc.n + 4 * sum(m == PLUS for m in mc.marks.tolist()) \
                + 2 * sum(m == MINUS for m in mc.marks.tolist())
            back = pl.local_decode_marks(out, 0.5)
            assert back == mc

    def test_separation_required(self):
        base = torus_config([[1.0, 1.0], [1.2, 1.0]])
        mc = MarkedConfiguration(base, np.asarray([PLUS, MINUS], dtype=object),
                                 BINARY_MARKS)
        with pytest.raises(PreconditionError):
            pl.local_encode_marks(mc, 0.5)

    def test_decode_rejects_garbage(self):
        with pytest.raises(UsageError):
            pl.local_decode_marks(torus_config([[1.0, 1.0], [5.0, 5.0]]), 0.5)


class TestEquivarianceSweep:
    def test_point_ops_equivariant(self):
        delta = 0.5
        ev = pl.LocalEvent(radius=1.0, fn=lambda view: (
            (view.distances_from_root() <= 1.0).sum() >= 2))
        # the offset must sit on the coordinate lattice for exact equivariance
        fset = [TORUS.identity(), TORUS.quantize(np.array([0.1, 0.0]))]
        ops = [
            lambda c: pl.delta_thinning(c, delta),
            lambda c: pl.thinning_from_set(c, ev),
            lambda c: pl.constant_thickening(pl.delta_thinning(c, delta), fset),
        ]
        for i in range(100):
            c = sample(i, t=1.0)
            if c.n == 0:
                continue
            g = random_g(i, "equiv")
            for op in ops:
                assert op(pl.translate(c, g)) == pl.translate(op(c), g)
