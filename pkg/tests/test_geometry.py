import math

import numpy as np
import pytest
from scipy import integrate, stats as sps

import palmlab as pl
from palmlab.errors import UsageError
from palmlab.geometry import haar_volume_quadrature
from palmlab.rng import trial_rng

TORUS = pl.FlatTorus(2, 10.0)
AFFINE = pl.AffineLine()
BOX3 = pl.EuclideanBox(3)


def hyperbolic_distance_oracle(p, q):
    """Numeric geodesic-length oracle for the upper half-plane.

    Points are (a, b) with half-plane coordinates (x, y) = (b, a).  Arc
    length is integrated along the known geodesic (vertical line or
    semicircle centered on the x axis), independent of any closed form.
    """
    x1, y1 = p[1], p[0]
    x2, y2 = q[1], q[0]
    if abs(x1 - x2) < 1e-14:
        lo, hi = sorted([y1, y2])
        val, _ = integrate.quad(lambda y: 1.0 / y, lo, hi)
        return val
    c = (x1 ** 2 + y1 ** 2 - x2 ** 2 - y2 ** 2) / (2.0 * (x1 - x2))
    r = math.hypot(x1 - c, y1)
    th1 = math.atan2(y1, x1 - c)
    th2 = math.atan2(y2, x2 - c)
    lo, hi = sorted([th1, th2])
    val, _ = integrate.quad(lambda th: 1.0 / math.sin(th), lo, hi)
    return val


class TestGroupLaw:
    def test_torus_wraparound(self):
        out = TORUS.mul(np.array([9.0, 9.0]), np.array([2.0, 3.0]))
        assert np.array_equal(out, np.array([1.0, 2.0]))

    def test_identity_neutral(self):
        rng = trial_rng(0, "geom-id", 0)
        for _ in range(50):
            g = TORUS.sample_uniform(TORUS.full_window(), rng)
            assert np.array_equal(TORUS.mul(g, TORUS.identity()), g)
            assert np.array_equal(TORUS.mul(TORUS.identity(), g), g)

    def test_affine_examples(self):
        out = AFFINE.mul(np.array([2.0, 1.0]), np.array([3.0, 4.0]))
        assert np.allclose(out, [6.0, 9.0])
        inv = AFFINE.inv(np.array([2.0, 1.0]))
        assert np.allclose(inv, [0.5, -0.5])

    def test_torus_group_axioms_randomized(self):
        # lattice coordinates make these identities exact, not approximate
        rng = trial_rng(0, "geom-axioms", 0)
        w = TORUS.full_window()
        for _ in range(1000):
            g, h, k = (TORUS.sample_uniform(w, rng) for _ in range(3))
            assert np.array_equal(TORUS.mul(TORUS.mul(g, h), k),
                                  TORUS.mul(g, TORUS.mul(h, k)))
            assert np.array_equal(TORUS.mul(TORUS.inv(g), g), TORUS.identity())
            assert np.array_equal(TORUS.mul(g, TORUS.inv(g)), TORUS.identity())

    def test_affine_group_axioms_randomized(self):
        rng = trial_rng(0, "geom-axioms-aff", 0)
        wa = pl.Window(AFFINE, np.array([0.5, -2.0]), np.array([3.0, 2.0]))
        for _ in range(1000):
            g, h, k = (AFFINE.sample_uniform(wa, rng) for _ in range(3))
            lhs = AFFINE.mul(AFFINE.mul(g, h), k)
            rhs = AFFINE.mul(g, AFFINE.mul(h, k))
            assert np.allclose(lhs, rhs, atol=1e-9)
            assert np.allclose(AFFINE.mul(AFFINE.inv(g), g), AFFINE.identity(), atol=1e-9)
            assert np.allclose(AFFINE.mul(g, AFFINE.inv(g)), AFFINE.identity(), atol=1e-9)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(UsageError):
            TORUS.mul(np.array([1.0]), np.array([1.0, 2.0]))


class TestMetric:
    def test_torus_wrap_distance(self):
        t1 = pl.FlatTorus(1, 10.0)
        assert t1.distance(np.array([1.0]), np.array([9.0])) == 2.0

    def test_distance_to_self_zero(self):
        rng = trial_rng(0, "geom-dist", 0)
        for _ in range(20):
            g = TORUS.sample_uniform(TORUS.full_window(), rng)
            assert TORUS.distance(g, g) == 0.0

    def test_affine_unit_distance(self):
        p, q = AFFINE.identity(), np.array([math.e, 0.0])
        oracle = hyperbolic_distance_oracle(p, q)
        assert abs(oracle - 1.0) < 1e-9
        assert abs(AFFINE.distance(p, q) - oracle) < 1e-6

    def test_affine_distance_matches_geodesic_oracle(self):
        rng = trial_rng(0, "geom-geo", 0)
        wa = pl.Window(AFFINE, np.array([0.5, -2.0]), np.array([3.0, 2.0]))
        for _ in range(25):
            p, q = AFFINE.sample_uniform(wa, rng), AFFINE.sample_uniform(wa, rng)
            assert AFFINE.distance(p, q) == pytest.approx(
                hyperbolic_distance_oracle(p, q), abs=1e-6)

    @pytest.mark.parametrize("carrier,window", [
        (TORUS, TORUS.full_window()),
        (AFFINE, pl.Window(AFFINE, np.array([0.5, -2.0]), np.array([3.0, 2.0]))),
    ])
    def test_left_invariance(self, carrier, window):
        rng = trial_rng(0, "geom-inv", 1)
        for _ in range(1000):
            g, x, y = (carrier.sample_uniform(window, rng) for _ in range(3))
            d0 = carrier.distance(x, y)
            d1 = carrier.distance(carrier.mul(g, x), carrier.mul(g, y))
            assert abs(d0 - d1) <= 1e-9


class TestHaar:
    def test_torus_full_volume(self):
        assert TORUS.full_window().haar_volume == 100.0

    def test_euclidean_unit_box(self):
        w = pl.Window(BOX3, np.zeros(3), np.ones(3))
        assert w.haar_volume == 1.0

    def test_affine_box_closed_form_and_quadrature(self):
        w = pl.Window(AFFINE, np.array([1.0, 0.0]), np.array([2.0, 1.0]))
        # closed form: width * (1/a0 - 1/a1) = 1 * (1 - 1/2)
        assert w.haar_volume == pytest.approx(0.5, rel=1e-12)
        quad = haar_volume_quadrature(w)
        assert w.haar_volume == pytest.approx(quad, rel=1e-6)
        dblquad, _ = integrate.dblquad(lambda b, a: 1.0 / a ** 2, 1.0, 2.0, 0.0, 1.0)
        assert w.haar_volume == pytest.approx(dblquad, rel=1e-6)

    def test_degenerate_window_volume_zero(self):
        w = pl.Window(TORUS, np.array([1.0, 1.0]), np.array([1.0, 3.0]))
        assert w.haar_volume == 0.0

    def test_window_quadrature_invariant(self):
        for w in (TORUS.full_window(),
                  pl.Window(TORUS, np.array([1.0, 2.0]), np.array([4.0, 7.0])),
                  pl.Window(AFFINE, np.array([0.25, -1.0]), np.array([4.0, 3.0]))):
            assert w.haar_volume == pytest.approx(haar_volume_quadrature(w), rel=1e-6)


class TestRightTranslate:
    def test_torus_unimodular(self):
        rng = trial_rng(0, "geom-rtv", 0)
        w = pl.Window(TORUS, np.array([1.0, 2.0]), np.array([4.0, 7.0]))
        for _ in range(50):
            f = TORUS.sample_uniform(TORUS.full_window(), rng)
            assert pl.right_translate_volume(w, f) == pytest.approx(
                w.haar_volume, rel=1e-6)

    def test_affine_identity(self):
        w = pl.Window(AFFINE, np.array([1.0, 0.0]), np.array([2.0, 1.0]))
        assert pl.right_translate_volume(w, AFFINE.identity()) == pytest.approx(
            w.haar_volume, rel=1e-9)

    def test_affine_scaling_witness(self):
        # quadrature oracle over the sheared image region, computed first
        w = pl.Window(AFFINE, np.array([1.0, 0.0]), np.array([2.0, 1.0]))
        f = np.array([2.0, 0.0])
        gamma, _ = AFFINE.inv(f)
        oracle, _ = integrate.quad(lambda ap: 1.0 / ap ** 2, 1.0 * gamma, 2.0 * gamma)
        assert oracle == pytest.approx(1.0, rel=1e-9)
        got = pl.right_translate_volume(w, f)
        assert got == pytest.approx(oracle, rel=1e-6)
        # the ratio to the window volume is the modular distortion of f^{-1}
        assert got / w.haar_volume == pytest.approx(2.0, rel=1e-6)
        assert got != pytest.approx(w.haar_volume, rel=1e-3)

    def test_affine_contracting_witness(self):
        # fixed witness with a right translate strictly smaller than the window
        w = pl.Window(AFFINE, np.array([1.0, 0.0]), np.array([2.0, 1.0]))
        f = np.array([0.5, 0.0])
        assert pl.right_translate_volume(w, f) < w.haar_volume


class TestSampling:
    def test_torus_mean_clt(self):
        rng = trial_rng(0, "geom-sample", 0)
        pts = TORUS.sample_uniform(TORUS.full_window(), rng, 100_000)
        se = 10.0 / math.sqrt(12.0) / math.sqrt(len(pts))
        for j in range(2):
            assert abs(pts[:, j].mean() - 5.0) <= 3.0 * se

    def test_unit_box_ks(self):
        box = pl.EuclideanBox(1)
        w = pl.Window(box, np.zeros(1), np.ones(1))
        rng = trial_rng(0, "geom-sample", 1)
        pts = box.sample_uniform(w, rng, 100_000)[:, 0]
        assert sps.kstest(pts, "uniform").pvalue >= 0.01

    def test_affine_scale_density(self):
        # binned chi-square against the quadrature of 1/a^2 per bin
        w = pl.Window(AFFINE, np.array([1.0, 0.0]), np.array([2.0, 1.0]))
        rng = trial_rng(0, "geom-sample", 2)
        pts = AFFINE.sample_uniform(w, rng, 100_000)
        edges = np.linspace(1.0, 2.0, 21)
        observed, _ = np.histogram(pts[:, 0], bins=edges)
        masses = np.array([integrate.quad(lambda a: 1.0 / a ** 2, lo, hi)[0]
                           for lo, hi in zip(edges[:-1], edges[1:])])
        expected = masses / masses.sum() * len(pts)
        stat, p, _ = pl.chi_square_gof(observed, expected)
        assert p >= 0.01
        # decreasing density: first bin clearly heavier than the last
        assert observed[0] > observed[-1]

    def test_zero_volume_window_rejected(self):
        w = pl.Window(TORUS, np.array([1.0, 1.0]), np.array([1.0, 3.0]))
        rng = trial_rng(0, "geom-sample", 3)
        with pytest.raises(UsageError):
            TORUS.sample_uniform(w, rng, 5)


class TestCarrierValidation:
    def test_unimodularity_flags(self):
        assert TORUS.unimodular and BOX3.unimodular and not AFFINE.unimodular

    def test_torus_needs_short_mantissa_side(self):
        with pytest.raises(UsageError):
            pl.FlatTorus(2, 10.1)

    def test_affine_scale_positive(self):
        with pytest.raises(UsageError):
            AFFINE.validate_points(np.array([[-1.0, 0.0]]))

    def test_torus_coordinates_in_range(self):
        with pytest.raises(UsageError):
            TORUS.validate_points(np.array([[10.0, 0.0]]))
