"""
Reduced-scale simulation studies. These take minutes; run them with ``pytest -m slow``.
"""
import numpy as np
import pytest
from pytest import approx, fixture

from covthresh.datagen import ModelSpec, SampleSpec, build_covariance, permute_variables, sample
from covthresh.experiments import (BANDING, BANDING_PERM, SAMPLE, THRESHOLDING, CvOracleConfig,
                                   EofConfig, RateConfig, ScreeConfig, Table1Config,
                                   cv_vs_oracle, eof_pipeline, loss_table_scheme, rate_study,
                                   run_table1, scree)
from covthresh.rng import Purpose, derive_seed
from covthresh.selection import BANDWIDTH, make_grid, select

pytestmark = pytest.mark.slow


@fixture(scope='module')
def table1():
    return run_table1(Table1Config(seed=20070419, p_list=(30, 100), n=100, replications=30))


class TestLossTable:

    @pytest.mark.parametrize('p, estimator, expected, tol', [
        (30, THRESHOLDING, 1.90, 0.30),
        (100, THRESHOLDING, 3.15, 0.45),
        (30, SAMPLE, 1.95, 0.45),
        (100, SAMPLE, 4.16, 0.60),
        (30, BANDING, 1.38, 0.30),
    ])
    def test_operator_norm_loss(self, table1, p, estimator, expected, tol):
        mean, _ = table1.value(p, estimator, 'operator')
        assert mean == approx(expected, abs=tol)

    @pytest.mark.parametrize('p, expected', [(30, 0.33), (100, 0.49)])
    def test_mean_threshold(self, table1, p, expected):
        mean, _ = table1.value(p, THRESHOLDING, 'chosen_param')
        assert mean == approx(expected, abs=0.07)

    def test_threshold_grows_with_p(self, table1):
        assert table1.value(100, THRESHOLDING, 'chosen_param')[0] \
            > table1.value(30, THRESHOLDING, 'chosen_param')[0]

    def test_ordering_at_p_100(self, table1):
        loss = {est: table1.value(100, est, 'operator')[0]
                for est in (BANDING, THRESHOLDING, SAMPLE, BANDING_PERM)}
        assert loss[BANDING] < loss[THRESHOLDING] < loss[SAMPLE]
        assert loss[THRESHOLDING] < loss[BANDING_PERM]


def test_permuted_banding_picks_diagonal():
    p, n = 100, 100
    truth = build_covariance(ModelSpec(kind='ar1', p=p, rho=0.7))
    grid = make_grid(p, n, p - 1, BANDWIDTH)
    zeros = 0
    for r in range(30):
        seed = derive_seed(7, Purpose.REPLICATION, r)
        xp, _ = permute_variables(sample(truth, SampleSpec(n=n, seed=seed)), seed)
        zeros += select(xp, grid, loss_table_scheme(n, 10, seed)).chosen == 0
    assert zeros >= 27


def test_rate_slope_on_identity():
    result = rate_study(RateConfig(seed=11, replications=30))
    assert result.predicted_slope == 0.5
    assert result.slope == approx(0.5, abs=0.15)
    assert len(result.points) == 4


def test_cross_validation_close_to_oracle():
    result = cv_vs_oracle(CvOracleConfig(seed=5, p=100, n=100, replications=50))
    assert result.mean <= 1.5
    assert np.all(result.ratios >= 1 - 1e-12)


def test_sample_covariance_overestimates_leading_eigenvalue():
    data = scree(ScreeConfig(seed=3, p=100, n=100, replications=30))
    first = {est: data.for_estimator(est).iloc[0] for est in (SAMPLE, THRESHOLDING)}
    sample_excess = first[SAMPLE]['mean'] - first[SAMPLE]['truth']
    thresholded_error = abs(first[THRESHOLDING]['mean'] - first[THRESHOLDING]['truth'])
    assert sample_excess > thresholded_error


def test_leading_eof_separates_blocks():
    separated = 0
    for seed in range(20):
        result = eof_pipeline(EofConfig(seed=seed, threshold='oracle'))
        separated += result.thresholded.block_mass[0].max() >= 0.9
        assert result.thresholded.negative_mass_fraction < 0.05, f'seed {seed}'
    assert separated >= 16
