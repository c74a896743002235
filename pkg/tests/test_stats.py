import math

import numpy as np
import pytest
from scipy import stats as sps

import palmlab as pl
from palmlab.errors import InsufficientDataError, UsageError
from palmlab.rng import experiment_id, mix64, trial_rng
from palmlab.stats import RatioMoments, StatReport, accumulate_trials


class TestMoments:
    def test_mean_case(self):
        m = RatioMoments.from_pairs([1.0, 2.0, 3.0, 6.0])
        assert m.estimate == 3.0
        # SE of the mean with the T/(T-1) correction equals s/sqrt(T)
        assert m.stderr == pytest.approx(np.std([1, 2, 3, 6], ddof=1) / 2.0)

    def test_ratio_case_exact(self):
        m = RatioMoments.from_pairs([25] * 8, [100.0] * 8)
        assert m.estimate == 0.25
        assert m.stderr == 0.0

    def test_empty(self):
        m = RatioMoments()
        assert m.estimate == 0.0 and m.stderr == 0.0


class TestReports:
    def _report(self, values, name="stat", reference=2.0):
        return StatReport.from_moments(name, RatioMoments.from_pairs(values),
                                       reference=reference)

    def test_merge_associative_commutative_bit_exact(self):
        rng = np.random.default_rng(5)
        a = self._report(rng.normal(2, 1, 37).tolist())
        b = self._report(rng.normal(2, 1, 53).tolist())
        c = self._report(rng.normal(2, 1, 29).tolist())
        left = pl.merge_reports(pl.merge_reports(a, b), c)
        right = pl.merge_reports(a, pl.merge_reports(b, c))
        assert left == right
        assert pl.merge_reports(a, b) == pl.merge_reports(b, a)
        # merged estimate equals the pooled mean bit-exactly
        assert left.n == 37 + 53 + 29

    def test_merge_requires_same_statistic(self):
        a = self._report([1.0, 2.0], name="a")
        b = self._report([1.0, 2.0], name="b")
        with pytest.raises(UsageError):
            pl.merge_reports(a, b)

    def test_pass_iff_z_within_threshold(self):
        good = self._report([2.0, 2.1, 1.9, 2.05, 1.95])
        assert good.passed and abs(good.z) <= 3
        bad = self._report([5.0, 5.1, 4.9, 5.05, 4.95])
        assert not bad.passed and abs(bad.z) > 3

    def test_zero_stderr_exact_match(self):
        r = self._report([2.0, 2.0, 2.0])
        assert r.stderr == 0.0 and r.z == 0.0 and r.passed

    def test_gof_report(self):
        r = StatReport.from_gof("g", 12.0, 0.2, 500, dof=10, alpha=0.01)
        assert r.passed and r.pvalue == 0.2 and r.reference is None
        r2 = StatReport.from_gof("g", 60.0, 1e-6, 500, dof=10, alpha=0.01)
        assert not r2.passed


class TestUtilities:
    def test_mean_se(self):
        m, se = pl.mean_se([1.0, 2.0, 3.0])
        assert m == 2.0 and se == pytest.approx(1.0 / math.sqrt(3))

    def test_ks_identical_samples(self):
        a = np.arange(100.0)
        stat, _ = pl.two_sample_ks(a, a)
        assert stat == 0.0

    def test_chi_square_exact_counts(self):
        expected = np.array([40.0, 30.0, 20.0, 10.0])
        stat, p, dof = pl.chi_square_gof(expected, expected)
        assert stat == 0.0 and p == 1.0

    def test_chi_square_pois4_self_test(self):
        rng = trial_rng(0, "stats-pois", 0)
        draws = rng.poisson(4.0, 100_000)
        ks = np.arange(30)
        observed = np.bincount(np.minimum(draws, 29), minlength=30)
        expected = sps.poisson.pmf(ks, 4.0) * len(draws)
        expected[-1] += sps.poisson.sf(29, 4.0) * len(draws)
        stat, p, dof = pl.chi_square_gof(observed, expected)
        assert p >= 0.01

    def test_chi_square_insufficient(self):
        with pytest.raises(InsufficientDataError):
            pl.chi_square_gof([1, 2, 3], [2, 2, 2])

    def test_two_sample_chi_square_detects_shift(self):
        rng = trial_rng(0, "stats-two", 0)
        a = np.bincount(rng.poisson(4.0, 5000), minlength=40)
        b = np.bincount(rng.poisson(6.0, 5000), minlength=40)
        _, p, _ = pl.two_sample_chi_square(a, b)
        assert p < 1e-6
        c = np.bincount(rng.poisson(4.0, 5000), minlength=40)
        _, p2, _ = pl.two_sample_chi_square(a, c)
        assert p2 >= 0.01

    def test_poisson_dispersion(self):
        rng = trial_rng(0, "stats-disp", 0)
        stat, p = pl.poisson_dispersion(rng.poisson(4.0, 2000))
        assert p >= 0.01
        stat, p = pl.poisson_dispersion(rng.poisson(4.0, 2000) * 2)
        assert p < 1e-6


class TestRngDerivation:
    def test_mix64_stable(self):
        assert mix64(1, 2, 3) == mix64(1, 2, 3)
        assert mix64(1, 2, 3) != mix64(1, 2, 4)
        assert mix64(0) != mix64(1)
        assert 0 <= mix64(123456789, 42, 7) < 2 ** 64

    def test_experiment_id_distinct(self):
        assert experiment_id("mecke") != experiment_id("clmm")

    def test_trial_rng_reproducible(self):
        a = trial_rng(9, "exp", 4).random(5)
        b = trial_rng(9, "exp", 4).random(5)
        assert np.array_equal(a, b)
        c = trial_rng(9, "exp", 5).random(5)
        assert not np.array_equal(a, c)


class TestTrialRunner:
    def test_thread_count_invariance(self):
        def trial(rng, i):
            return {"x": (rng.normal(), 1)}

        def hist(rng, i):
            inc = np.zeros(4, dtype=np.int64)
            inc[int(rng.integers(4))] = 1
            return {"h": inc}

        results = []
        for threads in (1, 4):
            m, h = accumulate_trials(200, trial, seed=3, experiment="runner",
                                     threads=threads, hist_shapes={"h": (4,)},
                                     hist_fn=hist)
            results.append((StatReport.from_moments("x", m["x"]), h["h"].tolist()))
        assert results[0] == results[1]

    def test_skipped_trials(self):
        def trial(rng, i):
            return {"x": (1.0, 1)} if i % 2 == 0 else None

        m, _ = accumulate_trials(10, trial, seed=0, experiment="skip")
        assert m["x"].trials == 5
