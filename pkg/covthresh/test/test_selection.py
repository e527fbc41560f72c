import json
import math

import numpy as np
import pytest
from pytest import approx, fixture, raises

from covthresh.datagen import ModelSpec, SampleSpec, build_covariance, sample
from covthresh.errors import DimensionMismatch, DimensionTooSmall, InputError, TooFewSamples
from covthresh.estimators import ObsMatrix, band, sample_covariance, threshold
from covthresh.matcore import SymMatrix
from covthresh.selection import (BANDWIDTH, OFF_DIAGONAL_THRESHOLD, THRESHOLD, SelectionResult,
                                 SplitScheme, TuningGrid, auto_grid, cv_risk, default_j_max,
                                 default_scheme, make_grid, oracle_select, regularize, select,
                                 split_rows)


@fixture(scope='module')
def ar1_x() -> ObsMatrix:
    sigma = build_covariance(ModelSpec(kind='ar1', p=20, rho=0.7))
    return sample(sigma, SampleSpec(n=60, seed=42))


class TestSplitScheme:

    def test_default_rule(self):
        scheme = default_scheme(100, seed=1)
        assert scheme.n2 == 22  # 100 / ln 100 = 21.7
        assert scheme.n1 == 78
        assert scheme.n_splits == 10

    def test_small_n(self):
        scheme = SplitScheme.default(10, seed=0)
        assert (scheme.n1, scheme.n2) == (6, 4)  # 10 / ln 10 = 4.34
        with raises(TooFewSamples):
            SplitScheme.default(2, seed=0)

    def test_swapped(self):
        scheme = default_scheme(100, n_splits=4, seed=3).swapped()
        assert (scheme.n1, scheme.n2, scheme.n_splits, scheme.seed) == (22, 78, 4, 3)

    def test_invalid(self):
        with raises(TooFewSamples):
            SplitScheme(n1=1, n2=5)
        with raises(InputError):
            SplitScheme(n1=5, n2=5, n_splits=0)
        with raises(InputError):
            SplitScheme(n1=5, n2=5, seed=-1)

    def test_split_rows_partition(self):
        scheme = SplitScheme(n1=7, n2=3, n_splits=2, seed=5)
        first, second = split_rows(scheme, 1)
        assert sorted(np.concatenate([first, second]).tolist()) == list(range(10))
        assert len(first) == 7


class TestGrid:

    def test_threshold_grid(self):
        grid = make_grid(100, 100, 3, THRESHOLD)
        assert list(grid.points) == approx([0.0, 0.21460, 0.42919, 0.64379], abs=1e-5)

    def test_single_point(self):
        assert make_grid(100, 100, 0).points == (0.0,)

    def test_bandwidth_capped(self):
        assert make_grid(5, 100, 10, BANDWIDTH).points == (0.0, 1.0, 2.0, 3.0, 4.0)

    def test_subdivisions(self):
        fine = make_grid(100, 100, 30, THRESHOLD, subdivisions=10)
        assert fine.points[10] == approx(make_grid(100, 100, 1).points[1])

    def test_errors(self):
        with raises(DimensionTooSmall):
            make_grid(1, 100, 3)
        with raises(InputError):
            TuningGrid((0.0, 0.2, 0.1))
        with raises(InputError):
            TuningGrid((0.1, 0.2))

    def test_default_j_max_reaches_largest_entry(self, ar1_x):
        s = sample_covariance(ar1_x)
        j = default_j_max(s, ar1_x.n)
        step = math.sqrt(math.log(s.p) / ar1_x.n)
        assert j * step >= np.abs(s.values).max()
        assert (j - 1) * step < np.abs(s.values).max()
        assert default_j_max(s, ar1_x.n, BANDWIDTH) == s.p - 1


class TestCvRisk:

    def test_single_split_by_hand(self):
        a = np.array([[1.0, 2.0], [2.0, 1.5], [0.5, -1.0], [3.0, 0.0], [-1.0, 1.0], [0.0, 0.5]])
        x = ObsMatrix(a)
        scheme = SplitScheme(n1=4, n2=2, n_splits=1, seed=3)
        grid = TuningGrid((0.0, 0.5))
        first, second = split_rows(scheme, 0)
        s1 = np.cov(a[first], rowvar=False, bias=True)
        s2 = np.cov(a[second], rowvar=False, bias=True)
        t1 = np.where(np.abs(s1) >= 0.5, s1, 0.0)
        curve = cv_risk(x, grid, scheme)
        assert curve[0][1] == approx(np.sum((s1 - s2) ** 2), abs=1e-12)
        assert curve[1][1] == approx(np.sum((t1 - s2) ** 2), abs=1e-12)

    def test_end_points(self, ar1_x):
        scheme = default_scheme(ar1_x.n, n_splits=4, seed=9)
        grid = TuningGrid((0.0, 1e6))
        zero, top = (r for _, r in cv_risk(ar1_x, grid, scheme))
        s0 = s_top = 0.0
        for i in range(4):
            first, second = split_rows(scheme, i)
            s1 = sample_covariance(ar1_x.take_rows(first)).values
            s2 = sample_covariance(ar1_x.take_rows(second)).values
            s0 += np.sum((s1 - s2) ** 2) / 4
            s_top += np.sum(s2 ** 2) / 4
        assert zero == approx(s0, rel=1e-12)
        assert top == approx(s_top, rel=1e-12)

    def test_deterministic(self, ar1_x):
        grid = auto_grid(sample_covariance(ar1_x), ar1_x.n, THRESHOLD, 4)
        scheme = default_scheme(ar1_x.n, seed=11)
        assert cv_risk(ar1_x, grid, scheme) == cv_risk(ar1_x, grid, scheme)

    def test_threads_do_not_change_result(self, ar1_x):
        grid = auto_grid(sample_covariance(ar1_x), ar1_x.n)
        scheme = default_scheme(ar1_x.n, seed=11)
        assert cv_risk(ar1_x, grid, scheme, threads=3) == cv_risk(ar1_x, grid, scheme)

    def test_too_few_rows(self):
        x = ObsMatrix(np.arange(10.0).reshape(5, 2))
        with raises(TooFewSamples):
            cv_risk(x, TuningGrid((0.0,)), SplitScheme(n1=4, n2=1))

    def test_missing_data_needs_pairwise(self, ar1_x):
        values = ar1_x.values
        values[0, 0] = np.nan
        x = ObsMatrix(values)
        scheme = default_scheme(x.n, seed=1)
        with raises(InputError):
            cv_risk(x, TuningGrid((0.0,)), scheme)
        assert len(cv_risk(x, TuningGrid((0.0, 0.1)), scheme, covariance='pairwise')) == 2

    def test_regularizer_must_match_grid(self, ar1_x):
        with raises(InputError):
            cv_risk(ar1_x, TuningGrid((0.0,)), default_scheme(ar1_x.n, seed=1), 'band')


class TestSelect:

    def test_single_point_grid(self, ar1_x):
        result = select(ar1_x, make_grid(20, 60, 0), default_scheme(60, seed=1))
        assert result.chosen == 0.0

    def test_chosen_minimizes_risk_with_largest_tie(self, ar1_x):
        grid = auto_grid(sample_covariance(ar1_x), ar1_x.n, THRESHOLD, 10)
        result = select(ar1_x, grid, default_scheme(60, seed=2))
        risks = np.array(result.risk)
        assert result.chosen == result.grid[np.flatnonzero(risks == risks.min())[-1]]

    def test_min_threshold(self, ar1_x):
        grid = make_grid(20, 60, 20)
        result = select(ar1_x, grid, default_scheme(60, seed=2), min_threshold=grid.points[15])
        assert result.chosen >= grid.points[15]

    def test_band_selection(self, ar1_x):
        result = select(ar1_x, make_grid(20, 60, 19, BANDWIDTH), default_scheme(60, seed=3))
        assert result.kind == BANDWIDTH
        assert 0 < result.chosen < 19

    def test_invariant_to_variable_order(self, ar1_x):
        grid = make_grid(20, 60, 15)
        scheme = default_scheme(60, seed=4)
        perm = np.random.default_rng(1).permutation(20)
        a = select(ar1_x, grid, scheme)
        b = select(ar1_x.take_columns(perm), grid, scheme)
        assert a.chosen == b.chosen
        assert a.risk == approx(b.risk, rel=1e-12)

    def test_positive_threshold_under_diagonal_truth(self):
        sigma = SymMatrix.identity(30)
        positive = 0
        for seed in range(100):
            x = sample(sigma, SampleSpec(n=400, seed=seed))
            grid = auto_grid(sample_covariance(x), 400, THRESHOLD, 4)
            positive += select(x, grid, default_scheme(400, n_splits=5, seed=seed)).chosen > 0
        assert positive >= 95

    def test_json(self, ar1_x):
        result = select(ar1_x, make_grid(20, 60, 4), default_scheme(60, n_splits=3, seed=8))
        d = json.loads(result.to_json())
        assert list(d) == ['kind', 'chosen', 'grid', 'risk', 'n1', 'n2', 'n_splits', 'seed']
        assert (d['n1'], d['n2'], d['n_splits'], d['seed']) == (45, 15, 3, 8)
        assert SelectionResult.from_dict(d) == result


class TestOracle:

    def test_exact_estimate(self):
        sigma = build_covariance(ModelSpec(kind='ar1', p=6, rho=0.5))
        grid = make_grid(6, 100, 5)
        result = oracle_select(sigma, sigma, grid)
        zero_risk = [pt for pt, r in result.risk_curve if r == 0]
        assert result.risk[0] == 0
        assert result.chosen == max(zero_risk)

    def test_removes_small_noise(self):
        rng = np.random.default_rng(0)
        noise = rng.uniform(-0.05, 0.05, (8, 8))
        noise = np.triu(noise, 1) + np.triu(noise, 1).T
        truth = SymMatrix.identity(8)
        result = oracle_select(SymMatrix(np.eye(8) + noise), truth, TuningGrid((0.0, 0.1)))
        assert result.risk[1] < result.risk[0]
        assert result.chosen == 0.1

    def test_matches_brute_force(self, ar1_x):
        s = sample_covariance(ar1_x)
        truth = build_covariance(ModelSpec(kind='ar1', p=20, rho=0.7))
        for kind, reg in ((THRESHOLD, threshold), (BANDWIDTH, band)):
            grid = make_grid(20, 60, 19, kind)
            losses = [np.sum((reg(s, pt if kind == THRESHOLD else int(pt)).values
                              - truth.values) ** 2) for pt in grid.points]
            best = max(pt for pt, loss in zip(grid.points, losses) if loss == min(losses))
            assert oracle_select(s, truth, grid).chosen == best

    def test_dimension_mismatch(self):
        with raises(DimensionMismatch):
            oracle_select(SymMatrix.identity(2), SymMatrix.identity(3), TuningGrid((0.0,)))

    def test_off_diagonal_threshold_keeps_variances(self, ar1_x):
        s = sample_covariance(ar1_x)
        truth = SymMatrix.identity(20)
        grid = auto_grid(s, 60, THRESHOLD, 2)
        result = oracle_select(s, truth, grid, OFF_DIAGONAL_THRESHOLD)
        assert result.chosen == grid.points[-1]
        estimate = regularize(s, result.chosen, OFF_DIAGONAL_THRESHOLD)
        np.testing.assert_array_equal(estimate.values, np.diag(np.diag(s.values)))

    def test_off_diagonal_threshold_needs_threshold_grid(self):
        with raises(InputError):
            oracle_select(SymMatrix.identity(3), SymMatrix.identity(3),
                          TuningGrid((0.0, 1.0), BANDWIDTH), OFF_DIAGONAL_THRESHOLD)


@pytest.mark.parametrize('n_splits', [1, 5])
def test_identical_seeds_give_identical_results(ar1_x, n_splits):
    grid = make_grid(20, 60, 10)
    scheme = default_scheme(60, n_splits=n_splits, seed=77)
    results = [select(ar1_x, grid, scheme) for _ in range(2)]
    assert results[0] == results[1]
