"""Statistical reports and test utilities.

Estimates are carried as exact per-trial accumulators (Python ints and
Fractions; every float is a dyadic rational, so sums stay exact).  Merging
reports is therefore associative, commutative, and bit-reproducible no
matter how trials are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import stats as _sps

from .errors import InsufficientDataError, UsageError
from .rng import trial_rng

DEFAULT_Z_THRESHOLD = 3.0
DEFAULT_ALPHA = 0.01


# ---------------------------------------------------------------- moments

def _frac(x) -> Fraction:
    return Fraction(float(x))


@dataclass(frozen=True)
class RatioMoments:
    """Exact sufficient statistics for a per-trial ratio estimator.

    Each trial contributes a pair (num, den); the estimate is
    sum(num)/sum(den) and the standard error is the linearized
    (cluster-robust) ratio variance.  Plain means are the den == 1 case.
    """

    trials: int = 0
    num: Fraction = Fraction(0)
    den: Fraction = Fraction(0)
    num2: Fraction = Fraction(0)
    numden: Fraction = Fraction(0)
    den2: Fraction = Fraction(0)

    @staticmethod
    def single(num, den=1) -> "RatioMoments":
        a, b = _frac(num), _frac(den)
        return RatioMoments(1, a, b, a * a, a * b, b * b)

    @staticmethod
    def from_pairs(nums, dens=None) -> "RatioMoments":
        nums = [_frac(v) for v in nums]
        dens = [Fraction(1)] * len(nums) if dens is None else [_frac(v) for v in dens]
        if len(nums) != len(dens):
            raise UsageError("numerator and denominator streams differ in length")
        m = RatioMoments()
        for a, b in zip(nums, dens):
            m = m.merged(RatioMoments(1, a, b, a * a, a * b, b * b))
        return m

    def merged(self, other: "RatioMoments") -> "RatioMoments":
        return RatioMoments(
            self.trials + other.trials,
            self.num + other.num,
            self.den + other.den,
            self.num2 + other.num2,
            self.numden + other.numden,
            self.den2 + other.den2,
        )

    @property
    def estimate(self) -> float:
        if self.den == 0:
            return 0.0
        return float(self.num / self.den)

    @property
    def stderr(self) -> float:
        if self.den == 0 or self.trials <= 1:
            return 0.0
        theta = self.num / self.den
        ss = self.num2 - 2 * theta * self.numden + theta * theta * self.den2
        if ss < 0:  # exact arithmetic; only possible at roundoff of inputs
            ss = Fraction(0)
        var = Fraction(self.trials, self.trials - 1) * ss / (self.den * self.den)
        return math.sqrt(float(var))


# ----------------------------------------------------------------- report

@dataclass(frozen=True)
class StatReport:
    """One named estimate with its pass/fail verdict.

    Two flavours share the container: z-type rows compare an estimate to a
    reference value (pass iff |z| <= z_threshold), and GOF-type rows carry a
    p-value compared to alpha (reference is None for these).  A row with
    ``invert=True`` is an expected-failure probe: it passes when the plain
    verdict would fail.
    """

    name: str
    estimate: float
    stderr: float
    n: int
    reference: float | None
    z: float
    passed: bool
    pvalue: float | None = None
    alpha: float | None = None
    z_threshold: float = DEFAULT_Z_THRESHOLD
    invert: bool = False
    moments: RatioMoments | None = field(default=None, compare=False)

    @staticmethod
    def from_moments(name, moments: RatioMoments, reference=None, *,
                     z_threshold=DEFAULT_Z_THRESHOLD, invert=False) -> "StatReport":
        est = moments.estimate
        se = moments.stderr
        if reference is None:
            z = 0.0
            ok = True
        else:
            diff = est - float(reference)
            if se == 0.0:
                z = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
            else:
                z = diff / se
            ok = abs(z) <= z_threshold
        if invert:
            ok = not ok
        return StatReport(name, est, se, int(moments.trials), reference, z, ok,
                          z_threshold=z_threshold, invert=invert, moments=moments)

    @staticmethod
    def from_gof(name, statistic, pvalue, n, *, dof=None,
                 alpha=DEFAULT_ALPHA, invert=False) -> "StatReport":
        z = 0.0
        if dof is not None and dof > 0:
            z = (statistic - dof) / math.sqrt(2.0 * dof)
        ok = pvalue >= alpha
        if invert:
            ok = not ok
        return StatReport(name, float(statistic), 0.0, int(n), None, z, ok,
                          pvalue=float(pvalue), alpha=alpha, invert=invert)

    def merged(self, other: "StatReport") -> "StatReport":
        if self.moments is None or other.moments is None:
            raise UsageError("only moment-backed reports can be merged")
        if (self.name, self.reference, self.z_threshold, self.invert) != (
                other.name, other.reference, other.z_threshold, other.invert):
            raise UsageError("cannot merge reports of different statistics")
        return StatReport.from_moments(self.name, self.moments.merged(other.moments),
                                       self.reference, z_threshold=self.z_threshold,
                                       invert=self.invert)


def merge_reports(a: StatReport, b: StatReport) -> StatReport:
    return a.merged(b)


def all_passed(reports: Iterable[StatReport]) -> bool:
    return all(r.passed for r in reports)


# --------------------------------------------------- elementary utilities

def mean_se(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return 0.0, 0.0
    if n == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))


def two_sample_ks(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("KS test needs non-empty samples")
    res = _sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def chi_square_gof(observed, expected) -> tuple[float, float, int]:
    """Chi-square goodness of fit on pre-binned counts.

    Adjacent bins are pooled from the tail until every expected count is at
    least 5.  Raises InsufficientDataError when fewer than 30 observations
    are available or pooling cannot reach two bins.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if observed.shape != expected.shape:
        raise UsageError("observed and expected must align")
    total = observed.sum()
    if total < 30:
        raise InsufficientDataError("insufficient data: fewer than 30 observations")
    obs, exp = pool_bins(observed, expected, min_expected=5.0)
    if len(obs) < 2:
        raise InsufficientDataError("insufficient data: pooling left fewer than 2 bins")
    # renormalize expected mass to the observed total so dof = bins - 1 applies
    exp = exp * (total / exp.sum())
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    p = float(_sps.chi2.sf(stat, dof))
    return stat, p, dof


def pool_bins(observed, expected, min_expected=5.0):
    """Pool adjacent bins (right to left) until expected counts clear a floor."""
    obs = list(np.asarray(observed, dtype=float))
    exp = list(np.asarray(expected, dtype=float))
    i = len(exp) - 1
    while i > 0:
        if exp[i] < min_expected:
            exp[i - 1] += exp[i]
            obs[i - 1] += obs[i]
            del exp[i], obs[i]
        i -= 1
    if len(exp) > 1 and exp[0] < min_expected:
        exp[1] += exp[0]
        obs[1] += obs[0]
        del exp[0], obs[0]
    return np.asarray(obs), np.asarray(exp)


def two_sample_chi_square(counts_a, counts_b, min_expected=5.0) -> tuple[float, float, int]:
    """Chi-square homogeneity test of two binned samples."""
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape:
        raise UsageError("histograms must share binning")
    na, nb = a.sum(), b.sum()
    if na < 30 or nb < 30:
        raise InsufficientDataError("insufficient data: fewer than 30 observations")
    pooled = a + b
    # pool bins so both expected vectors clear the floor
    scale = min(na, nb) / (na + nb)
    a2, _ = pool_bins(a, pooled * scale, min_expected)
    b2, ref = pool_bins(b, pooled * scale, min_expected)
    if len(a2) != len(b2):  # pooling is driven by the shared pooled vector
        raise UsageError("inconsistent pooling")
    if len(a2) < 2:
        # both samples concentrate on one pooled bin: exact agreement
        return 0.0, 1.0, 1
    tot = a2 + b2
    exp_a = tot * (na / (na + nb))
    exp_b = tot * (nb / (na + nb))
    stat = float((((a2 - exp_a) ** 2) / exp_a + ((b2 - exp_b) ** 2) / exp_b).sum())
    dof = len(a2) - 1
    p = float(_sps.chi2.sf(stat, dof))
    return stat, p, dof


def poisson_dispersion(counts) -> tuple[float, float]:
    """Index-of-dispersion test statistic and two-sided p-value.

    Under a Poisson null, (n-1) * s^2 / mean is approximately chi-square
    with n-1 degrees of freedom.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.size
    if n < 2:
        raise InsufficientDataError("dispersion test needs at least 2 counts")
    mean = counts.mean()
    if mean == 0:
        raise InsufficientDataError("dispersion test needs a positive mean")
    stat = (n - 1) * counts.var(ddof=1) / mean
    lo = float(_sps.chi2.cdf(stat, n - 1))
    hi = float(_sps.chi2.sf(stat, n - 1))
    return float(stat), 2.0 * min(lo, hi)


# -------------------------------------------------------- trial execution

def accumulate_trials(
    n_trials: int,
    trial_fn: Callable[[np.random.Generator, int], Mapping[str, tuple] | None],
    *,
    seed: int,
    experiment: str,
    threads: int = 1,
    hist_shapes: Mapping[str, tuple] | None = None,
    hist_fn: Callable | None = None,
) -> tuple[dict[str, RatioMoments], dict[str, np.ndarray]]:
    """Run seeded trials and merge their contributions exactly.

    ``trial_fn(rng, i)`` returns a mapping from statistic name to a
    (num, den) pair, or None to skip the trial.  ``hist_fn(rng, i)``, when
    given, returns integer histogram increments matching ``hist_shapes``.
    Integer and Fraction accumulation makes the result independent of
    scheduling, so any thread count yields bit-identical output.
    """
    moments: dict[str, RatioMoments] = {}
    hists = {k: np.zeros(s, dtype=np.int64) for k, s in (hist_shapes or {}).items()}

    def run_one(i: int):
        rng = trial_rng(seed, experiment, i)
        contrib = trial_fn(rng, i) if trial_fn is not None else None
        hc = hist_fn(rng, i) if hist_fn is not None else None
        return contrib, hc

    def fold(result):
        contrib, hc = result
        if contrib:
            for key, pair in contrib.items():
                m = RatioMoments.single(*pair)
                moments[key] = moments[key].merged(m) if key in moments else m
        if hc:
            for key, inc in hc.items():
                hists[key] += inc

    if threads <= 1:
        for i in range(n_trials):
            fold(run_one(i))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for result in pool.map(run_one, range(n_trials), chunksize=64):
                fold(result)
    return moments, hists
