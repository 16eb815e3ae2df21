"""
Unit tests for return series, spectral radius estimation and summability criteria.
"""
import math
from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest

from brwlab.core.exceptions import ConfigurationError, InsufficientDataError
from brwlab.graphs.families import Hammock, HomTree, Line, glue, product
from brwlab.kernels import (
    ArithmeticMode,
    BiasedLine,
    HeightBiased,
    Lazy,
    ProductKernel,
    Simple,
    build_kernel,
)
from brwlab.services.spectral_lab import (
    analytic_rho,
    classify_regime,
    criticality_sum,
    dirichlet_rho,
    exponent_additivity,
    fit_spectral,
    hammock_level_bound,
    meeting_matrix,
    n_step_distribution,
    resolve_rho,
    return_series,
    supercritical_lag,
    transition_probability,
    two_walk_sum,
)

RATIONAL = ArithmeticMode.RATIONAL
HALF = Fraction(1, 2)
RHO_T3 = 2 * math.sqrt(2) / 3
RHO_T3XZ = 0.5 * RHO_T3 + 0.5
HALF_PRODUCT = ProductKernel(((Simple(), HALF), (Simple(), HALF)))
BIASED_PRODUCT = ProductKernel(((Simple(), HALF), (BiasedLine(Fraction(7, 10)), HALF)))


def _sparse_returns(kernel, horizon):
    dist = {kernel.origin: kernel.mode.one}
    out = [kernel.mode.one]
    for _ in range(horizon):
        dist = kernel.push(dist)
        out.append(dist.get(kernel.origin, kernel.mode.zero))
    return out


class TestReturnSeries:
    """Test return probabilities and series strategies."""

    def test_tree_exact_values(self, tree):
        series = return_series(build_kernel(Simple(), tree, RATIONAL), 4)
        assert series.strategy == "quotient"
        assert series.exact[2] == Fraction(1, 3)
        assert series.exact[4] == Fraction(5, 27)
        assert series.period == 2

    def test_hammock_p2(self, hammock):
        series = return_series(build_kernel(Simple(), hammock, RATIONAL), 2)
        assert series.strategy == "hammock-quotient"
        assert series.value(2) == Fraction(31, 210)

    def test_hammock_lower_bound(self, hammock):
        series = return_series(build_kernel(Simple(), hammock), 30)
        for n in range(1, 16):
            assert series.log_p[2 * n] >= n * math.log(4 / 35) - 1e-12

    def test_tree_quotient_matches_sparse(self, tree):
        kernel = build_kernel(Simple(), tree, RATIONAL)
        assert return_series(kernel, 12).exact == _sparse_returns(kernel, 12)

    def test_product_convolution_matches_sparse(self, t3xz_rational_kernel):
        series = return_series(t3xz_rational_kernel, 8)
        assert series.strategy == "convolution"
        assert series.exact == _sparse_returns(t3xz_rational_kernel, 8)

    def test_hammock_quotient_matches_sparse(self, hammock):
        kernel = build_kernel(Simple(), hammock)
        series = return_series(kernel, 6)
        for n, value in enumerate(_sparse_returns(kernel, 6)):
            assert series.value(n) == pytest.approx(value, abs=1e-12)

    def test_lazy_tree_matches_sparse(self, tree):
        kernel = build_kernel(Lazy(Simple(), 0.5), tree)
        series = return_series(kernel, 10)
        assert series.period == 1
        for n, value in enumerate(_sparse_returns(kernel, 10)):
            assert series.value(n) == pytest.approx(value, abs=1e-12)

    @pytest.mark.parametrize(
        "make, horizon, strategy",
        [
            (lambda: build_kernel(Simple(), Line(), RATIONAL), 20, "quotient"),
            (lambda: build_kernel(BiasedLine(Fraction(7, 10)), Line(), RATIONAL), 20, "quotient"),
            (lambda: build_kernel(Simple(), HomTree(3)), 16, "quotient"),
            (lambda: build_kernel(Lazy(Simple(), HALF), HomTree(3)), 14, "quotient"),
            (lambda: build_kernel(Simple(), Hammock()), 8, "hammock-quotient"),
            (lambda: build_kernel(HALF_PRODUCT, product(HomTree(3), Line())), 12, "convolution"),
            (lambda: build_kernel(BIASED_PRODUCT, product(HomTree(3), Line())), 12, "convolution"),
            (lambda: build_kernel(HALF_PRODUCT, product(HomTree(3), HomTree(3))), 10, "convolution"),
        ],
        ids=["line", "biased-line", "tree", "lazy-tree", "hammock", "t3xz", "biased-t3xz", "t3xt3"],
    )
    def test_fast_strategies_match_sparse(self, make, horizon, strategy):
        kernel = make()
        series = return_series(kernel, horizon)
        assert series.strategy == strategy
        for n, value in enumerate(_sparse_returns(kernel, horizon)):
            assert float(series.value(n)) == pytest.approx(float(value), abs=1e-12)

    def test_sparse_fallback(self, tree):
        kernel = build_kernel(HeightBiased(Fraction(7, 10)), tree, RATIONAL)
        series = return_series(kernel, 6)
        assert series.strategy == "sparse"
        assert series.exact == _sparse_returns(kernel, 6)

    def test_off_origin_start(self, hammock):
        kernel = build_kernel(Simple(), hammock)
        series = return_series(kernel, 4, origin=("s", 1))
        assert series.strategy == "sparse"
        assert series.value(0) == 1.0

    def test_horizon_must_be_positive(self, tree):
        with pytest.raises(ConfigurationError):
            return_series(build_kernel(Simple(), tree), 0)

    def test_truncated(self, tree):
        series = return_series(build_kernel(Simple(), tree), 20).truncated(10)
        assert series.horizon == 10

    def test_transition_probability(self, line):
        kernel = build_kernel(Simple(), line, RATIONAL)
        assert transition_probability(kernel, 0, 2, 2) == Fraction(1, 4)
        assert sum(n_step_distribution(kernel, 0, 5).values()) == 1


class TestAnalyticRho:
    """Test closed-form spectral radii."""

    def test_tree(self):
        assert float(analytic_rho(Simple(), HomTree(3))) == pytest.approx(0.9428090, abs=1e-7)

    def test_fifty_digits(self):
        value = analytic_rho(Simple(), HomTree(3))
        assert isinstance(value, Decimal)
        assert len(value.as_tuple().digits) == 50
        assert str(value).startswith("0.942809041582063365867792482806")

    def test_half_product(self, half_product_spec):
        value = analytic_rho(half_product_spec, product(HomTree(3), Line()))
        assert float(value) == pytest.approx(0.9714045, abs=1e-7)

    def test_biased_product(self, biased_product_spec):
        value = analytic_rho(biased_product_spec, product(HomTree(3), Line()))
        assert float(value) == pytest.approx(0.9296630, abs=1e-7)

    def test_simple_on_product_uses_degree_weights(self):
        value = analytic_rho(Simple(), product(HomTree(3), Line()))
        assert float(value) == pytest.approx(0.6 * RHO_T3 + 0.4)

    def test_lazy(self):
        value = analytic_rho(Lazy(Simple(), HALF), HomTree(3))
        assert float(value) == pytest.approx(0.5 + 0.5 * RHO_T3)

    def test_unknown(self):
        assert analytic_rho(HeightBiased(0.7), HomTree(3)) is None
        assert analytic_rho(Simple(), Hammock()) is None


class TestFit:
    """Test the polynomial-exponential fit."""

    def test_tree_with_known_rho(self, tree):
        fit = fit_spectral(return_series(build_kernel(Simple(), tree), 4000), known_rho=RHO_T3)
        assert fit.method == "closed-form"
        assert 1.4 <= fit.exponent <= 1.6
        assert fit.r_squared >= 0.99
        assert fit.window_start == 2000

    def test_tree_ratio_regression(self, tree):
        fit = fit_spectral(return_series(build_kernel(Simple(), tree), 4000))
        assert fit.method == "quotient-dp-extrapolation"
        assert fit.rho == pytest.approx(RHO_T3, abs=1e-3)
        assert 1.4 <= fit.exponent <= 1.6

    def test_biased_line(self, line):
        fit = fit_spectral(return_series(build_kernel(BiasedLine(0.7), line), 4000))
        assert fit.rho == pytest.approx(2 * math.sqrt(0.21), abs=1e-3)
        assert fit.exponent == pytest.approx(0.5, abs=0.1)

    def test_simple_line_exponent(self, line):
        fit = fit_spectral(return_series(build_kernel(Simple(), line), 4000))
        assert fit.rho == pytest.approx(1.0, abs=1e-3)
        assert 0.45 <= fit.exponent <= 0.55

    @pytest.mark.slow
    def test_t3xt3_ratio_regression(self, t3xt3, half_product_spec):
        fit = fit_spectral(return_series(build_kernel(half_product_spec, t3xt3), 4000))
        assert fit.method == "quotient-dp-extrapolation"
        assert fit.rho == pytest.approx(RHO_T3, abs=1e-3)
        assert 2.85 <= fit.exponent <= 3.15

    @pytest.mark.slow
    def test_product_exponents_add(self, t3xz_kernel):
        fit = fit_spectral(return_series(t3xz_kernel, 4000))
        assert fit.rho == pytest.approx(0.9714045, abs=1e-3)
        assert 1.9 <= fit.exponent <= 2.1

    def test_too_few_terms(self, tree):
        with pytest.raises(InsufficientDataError):
            fit_spectral(return_series(build_kernel(Simple(), tree), 50))


class TestDirichlet:
    """Test Dirichlet spectral radii on balls."""

    def test_line_matches_dense_eigensolver(self, line):
        radius = 100
        size = 2 * radius + 1
        dense = np.diag(np.full(size - 1, 0.5), 1) + np.diag(np.full(size - 1, 0.5), -1)
        top = np.linalg.eigvalsh(dense)[-1]
        estimate = dirichlet_rho(build_kernel(Simple(), line), radius)
        assert estimate.converged
        assert top == pytest.approx(math.cos(math.pi / 202), abs=1e-12)
        assert estimate.rho == pytest.approx(top, abs=1e-8)

    def test_tree_below_limit(self, tree):
        estimate = dirichlet_rho(build_kernel(Simple(), tree), 16)
        assert estimate.representation == "quotient"
        assert 0.90 < estimate.rho < RHO_T3

    def test_radius_zero_is_stay_probability(self, tree):
        assert dirichlet_rho(build_kernel(Simple(), tree), 0).rho == 0.0
        assert dirichlet_rho(build_kernel(Lazy(Simple(), 0.5), tree), 0).rho == 0.5

    def test_hammock_nondecreasing(self, hammock):
        kernel = build_kernel(Simple(), hammock)
        values = [dirichlet_rho(kernel, r).rho for r in (4, 8, 12, 16)]
        assert values == sorted(values)
        assert all(0 < v < 1 for v in values)

    def test_ball_representation(self, tree):
        estimate = dirichlet_rho(build_kernel(HeightBiased(0.7), tree), 4)
        assert estimate.representation == "ball"
        assert estimate.ball_size == 1 + 3 + 6 + 12 + 24


class TestResolveRho:
    """Test the rho resolution order."""

    def test_closed_form(self, t3xz_kernel):
        resolution = resolve_rho(t3xz_kernel)
        assert resolution.method == "closed-form"
        assert resolution.value == pytest.approx(0.9714045, abs=1e-7)

    def test_glued_takes_max_of_parts(self):
        g = glue([HomTree(3), Line()], [(), 0])
        resolution = resolve_rho(build_kernel(Simple(), g))
        assert resolution.method == "glued-max-of-parts"
        assert resolution.value == pytest.approx(1.0)

    def test_hammock_from_series(self, hammock):
        resolution = resolve_rho(build_kernel(Simple(), hammock), horizon=2000)
        assert resolution.method == "quotient-dp-extrapolation"
        assert 0 < resolution.value < 1

    def test_height_biased_product(self):
        g = product(HomTree(3), HomTree(3))
        spec = ProductKernel(((HeightBiased(Fraction(7, 10)), HALF), (Simple(), HALF)))
        resolution = resolve_rho(build_kernel(spec, g), radii=(4, 5, 6))
        assert resolution.method == "product-weighted-sum"
        assert resolution.detail["factor2"] == pytest.approx(RHO_T3)


class TestCriticalitySum:
    """Test the criticality series verdicts."""

    @pytest.mark.slow
    def test_t3xt3_converges(self, t3xt3, half_product_spec):
        series = return_series(build_kernel(half_product_spec, t3xt3), 4000)
        report = criticality_sum(series, RHO_T3)
        assert report.verdict == "converged"
        assert report.exponent == pytest.approx(3.0, abs=0.15)
        assert report.tail_estimate is not None

    @pytest.mark.slow
    def test_t3xz_diverges_logarithmically(self, t3xz_kernel):
        series = return_series(t3xz_kernel, 4000)
        report = criticality_sum(series, 0.5 * RHO_T3 + 0.5)
        assert report.verdict == "diverging"
        assert report.divergence_model == "log"
        assert report.divergence_r_squared >= 0.99

    def test_partial_sums_nondecreasing(self, tree):
        report = criticality_sum(return_series(build_kernel(Simple(), tree), 400), RHO_T3)
        sums = report.partial_sums
        assert all(b >= a for a, b in zip(sums, sums[1:]))
        assert report.horizon == 400


class TestTwoWalkSum:
    """Test the two-walk meeting sum."""

    def test_meeting_matrix_on_line(self, line):
        meet = meeting_matrix(build_kernel(Simple(), line), 0, 0, 4)
        assert meet[0, 0] == 1.0
        assert meet[1, 1] == pytest.approx(0.5)
        assert meet[1, 0] == 0.0

    def test_tree_radial_matches_sparse(self, tree):
        kernel = build_kernel(Simple(), tree)
        meet = meeting_matrix(kernel, (), (0, 1), 5)
        assert meet[1, 1] == pytest.approx(1 / 3 * 1 / 3)
        assert meet[2, 0] == pytest.approx(transition_probability(kernel, (), (0, 1), 2))

    def test_diagonal_matches_return_series(self, t3xt3, half_product_spec):
        kernel = build_kernel(half_product_spec, t3xt3)
        report = two_walk_sum(kernel, t3xt3.origin, t3xt3.origin, 1 / RHO_T3, 200)
        assert report.diagonal_max_relative_error < 1e-9
        assert report.verdict == "converged"

    def test_distinct_sources(self, t3xt3, half_product_spec):
        kernel = build_kernel(half_product_spec, t3xt3)
        report = two_walk_sum(kernel, t3xt3.origin, ((0, 0, 0, 0), ()), 1 / RHO_T3, 60)
        assert report.diagonal_max_relative_error is None
        sums = report.partial_sums
        assert sums[3] == 0.0
        assert all(b >= a for a, b in zip(sums, sums[1:]))


    def test_distance_ten_below_diagonal(self, t3xt3, half_product_spec):
        kernel = build_kernel(half_product_spec, t3xt3)
        far = two_walk_sum(kernel, t3xt3.origin, ((0,) * 10, ()), 1 / RHO_T3, 200)
        near = two_walk_sum(kernel, t3xt3.origin, t3xt3.origin, 1 / RHO_T3, 200)
        sums = far.partial_sums
        assert sums[9] == 0.0
        assert sums[10] > 0.0
        assert all(b >= a for a, b in zip(sums, sums[1:]))
        assert all(a < b for a, b in zip(sums[10:], near.partial_sums[10:]))
        assert far.verdict == "converged"

    def test_t3xz_two_walk_diverges(self, t3xz_kernel):
        report = two_walk_sum(t3xz_kernel, t3xz_kernel.origin, t3xz_kernel.origin, 1 / RHO_T3XZ, 200)
        assert report.diagonal_max_relative_error < 1e-9
        assert report.verdict == "diverging"
        assert report.partial_sums[-1] > report.partial_sums[100]

class TestRegime:
    """Test regime classification."""

    def test_examples(self):
        assert classify_regime(1.0, 0.9).regime == "transient"
        assert classify_regime(1 / 0.9, 0.9).regime == "critical"
        assert classify_regime(1.2, 0.9).regime == "recurrent"

    def test_critical_is_transient(self):
        report = classify_regime(1 / RHO_T3, RHO_T3)
        assert report.critical and report.transient


class TestSupplements:
    """Test hammock bounds, lags and product additivity."""

    def test_hammock_level_bound(self):
        assert hammock_level_bound() == Fraction(4, 7)

    def test_supercritical_lag(self, tree):
        series = return_series(build_kernel(Lazy(Simple(), 0.5), tree), 200)
        assert supercritical_lag(series, 0.4) == 1
        assert supercritical_lag(series, 0.5) == 2

    def test_supercritical_lag_missing(self, tree):
        series = return_series(build_kernel(Simple(), tree), 20)
        with pytest.raises(InsufficientDataError):
            supercritical_lag(series, RHO_T3)

    @pytest.mark.slow
    def test_additivity(self, t3xz_kernel):
        report = exponent_additivity(t3xz_kernel, 4000)
        assert report.rho_gap < 1e-3
        assert report.exponent_gap < 0.2
        assert report.weights == [0.5, 0.5]

    def test_additivity_needs_product(self, tree):
        with pytest.raises(ConfigurationError):
            exponent_additivity(build_kernel(Simple(), tree), 100)
