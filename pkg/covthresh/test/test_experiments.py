import io
import json
import math
from typing import Optional, get_type_hints

import numpy as np
import openpyxl
import pandas as pd
import pytest
from pytest import approx, fixture, raises

from covthresh.datagen import (ModelSpec, SampleSpec, build_covariance, sample,
                               synthetic_spatial_field)
from covthresh.errors import DimensionMismatch, InputError, LadderDegenerate
from covthresh.estimators import sample_covariance, threshold
from covthresh.experiments import (BANDING, BANDING_PERM, ESTIMATORS, LEDOIT_WOLF,
                                   LOSS_TABLE_SPLIT_RULE, SAMPLE, THRESHOLDING, CvOracleConfig,
                                   EofConfig, LossRecord, RateConfig, ScreeConfig, SummaryTable,
                                   Table1Config, compute_losses, cv_oracle_record, cv_vs_oracle,
                                   eof_pipeline, eof_set, frobenius_ratio, loss_table_scheme,
                                   rate_study, run_table1, scree)
from covthresh.matcore import SymMatrix, sym_eigen
from covthresh.rng import Purpose, derive_seed
from covthresh.selection import TuningGrid, default_scheme


class TestComputeLosses:

    def test_exact(self):
        sigma = build_covariance(ModelSpec(kind='ar1', p=5, rho=0.5))
        rec = compute_losses(sigma, sigma, SAMPLE)
        assert (rec.one_norm_loss, rec.op_norm_loss, rec.frob_loss) == (0.0, 0.0, 0.0)
        assert rec.lambda_max_abs_err == approx(0.0, abs=1e-12)
        assert rec.pc1_abs_cos == approx(1.0)

    def test_shift_by_identity(self):
        sigma = build_covariance(ModelSpec(kind='ar1', p=9, rho=0.5))
        rec = compute_losses(sigma + SymMatrix.identity(9), sigma, SAMPLE)
        assert rec.op_norm_loss == approx(1.0)
        assert rec.frob_loss == approx(3.0)
        assert rec.lambda_max_abs_err == approx(1.0)
        assert rec.pc1_abs_cos == approx(1.0)

    def test_orthogonal_leading_vectors(self):
        rec = compute_losses(SymMatrix.diag([1.0, 2.0]), SymMatrix.diag([2.0, 1.0]), SAMPLE)
        assert rec.pc1_abs_cos == 0.0

    def test_one_norm_dominates_operator(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.standard_normal((6, 6))
            rec = compute_losses(SymMatrix(a + a.T), SymMatrix.identity(6), SAMPLE)
            assert rec.one_norm_loss >= rec.op_norm_loss - 1e-9

    def test_dimension_mismatch(self):
        with raises(DimensionMismatch):
            compute_losses(SymMatrix.identity(2), SymMatrix.identity(3), SAMPLE)


class TestSummaryTable:

    @fixture
    def records(self):
        return {5: [[LossRecord('A', 1.0, 0.5, 2.0, 0.1, 0.9, 0.3)],
                    [LossRecord('A', 3.0, 1.5, 4.0, 0.3, 0.7, 0.5)],
                    [LossRecord('A', 2.0, 1.0, 3.0, 0.2, 0.8, None)]]}

    def test_mean_and_se(self, records):
        table = SummaryTable.from_records(records)
        mean, se = table.value(5, 'A', 'one_norm')
        values = np.array([1.0, 3.0, 2.0])
        brute_sd = math.sqrt(sum((v - values.mean()) ** 2 for v in values) / (len(values) - 1))
        assert mean == approx(2.0)
        assert se == approx(brute_sd / math.sqrt(3))

    def test_chosen_param_only_where_present(self, records):
        table = SummaryTable.from_records(records)
        assert table.value(5, 'A', 'chosen_param') == approx((0.4, 0.1))
        assert table.df.loc[table.df.measure == 'chosen_param', 'reps'].iloc[0] == 2

    def test_missing_cell(self, records):
        with raises(KeyError):
            SummaryTable.from_records(records).value(5, 'B', 'one_norm')

    def test_csv_columns(self, records):
        out = io.StringIO()
        SummaryTable.from_records(records).to_csv(out)
        assert out.getvalue().splitlines()[0] == 'p,estimator,measure,mean,se,reps'

    def test_json(self, records):
        d = json.loads(SummaryTable.from_records(records, {'seed': 1}).to_json())
        assert d['metadata'] == {'seed': 1}
        assert d['rows'][0]['measure'] == 'one_norm'

    def test_to_excel(self, records, tmp_path):
        path = tmp_path / 'summary.xlsx'
        SummaryTable.from_records(records, {'seed': 1}).to_excel(path)
        ws = openpyxl.load_workbook(path).active
        rows = list(ws.values)
        assert rows[0][:2] == ('seed', '1')
        assert rows[2] == ('p', 'estimator', 'measure', 'mean', 'se', 'reps')
        assert rows[3][:3] == (5, 'A', 'one_norm')


class TestConfigs:

    def test_seed_required(self):
        with raises(InputError):
            Table1Config.from_dict({'p_list': [10]})

    def test_unknown_key(self):
        with raises(InputError, match="'reps'"):
            Table1Config.from_dict({'seed': 1, 'reps': 3})

    def test_lists_become_tuples(self):
        config = RateConfig.from_dict({'seed': 1, 'ladder': [[20, 50], [30, 80], [40, 120],
                                                             [60, 200]]})
        assert config.ladder[0] == (20, 50)

    def test_replications(self):
        with raises(InputError):
            Table1Config(seed=1, replications=1)

    def test_degenerate_ladder(self):
        with raises(LadderDegenerate):
            RateConfig(seed=1, ladder=((50, 200),) * 4)
        with raises(LadderDegenerate):
            RateConfig(seed=1, ladder=((50, 200), (100, 400)))

    def test_eof_threshold(self):
        with raises(InputError):
            EofConfig(seed=1, threshold='best')
        assert EofConfig(seed=1, threshold=0.2).threshold == 0.2

    @pytest.mark.parametrize('config_cls', [Table1Config, ScreeConfig, RateConfig, CvOracleConfig,
                                            EofConfig])
    def test_seed_is_optional_in_type_but_required(self, config_cls):
        assert get_type_hints(config_cls)['seed'] == Optional[int]
        with raises(InputError, match='Seed'):
            config_cls()

    def test_knobs(self):
        with raises(InputError):
            ScreeConfig(seed=1, eigen_solver='qr')


class TestRunTable1:

    @fixture(scope='class')
    def config(self):
        return Table1Config(seed=2024, p_list=(10,), n=40, replications=3, n_splits=3,
                            grid_subdivisions=2)

    @fixture(scope='class')
    def table(self, config):
        return run_table1(config)

    def test_rows(self, table):
        df = table.df
        assert set(df.estimator) == set(ESTIMATORS)
        assert set(df.reps) == {3}
        chosen = df[df.measure == 'chosen_param']
        assert sorted(chosen.estimator) == sorted([BANDING, BANDING_PERM, THRESHOLDING])

    def test_deterministic(self, config, table):
        assert run_table1(config).df.equals(table.df)

    def test_threads(self, config, table):
        threaded = Table1Config(**dict(config.to_dict(), threads=3))
        assert run_table1(threaded).df.equals(table.df)

    def test_one_norm_dominates(self, table):
        for est in ESTIMATORS:
            assert table.value(10, est, 'one_norm')[0] >= table.value(10, est, 'operator')[0]

    def test_metadata_records_cv_settings(self, table):
        assert table.metadata['config']['n_splits'] == 3
        assert table.metadata['split_rule'] == LOSS_TABLE_SPLIT_RULE

    def test_fits_on_the_smaller_half(self):
        scheme = loss_table_scheme(100, 10, 7)
        assert (scheme.n1, scheme.n2) == (22, 78)

    def test_permutation_invariant_estimators(self):
        # thresholding, sample and Ledoit-Wolf losses do not depend on the order of variables
        truth = build_covariance(ModelSpec(kind='ar1', p=8, rho=0.7))
        x = sample(truth, SampleSpec(n=30, seed=3))
        perm = np.random.default_rng(2).permutation(8)
        s, sp = sample_covariance(x), sample_covariance(x.take_columns(perm))
        a = compute_losses(threshold(s, 0.3), truth, THRESHOLDING)
        b = compute_losses(threshold(sp, 0.3), truth.permute(perm), THRESHOLDING)
        assert a.op_norm_loss == approx(b.op_norm_loss, rel=1e-10)
        assert a.frob_loss == approx(b.frob_loss, rel=1e-12)


class TestScree:

    def test_truth_column(self):
        config = ScreeConfig(seed=5, p=8, n=30, replications=3, n_splits=2, grid_subdivisions=1)
        data = scree(config)
        truth = sym_eigen(build_covariance(ModelSpec(kind='ar1', p=8, rho=0.7))).values
        for est in data.estimators:
            df = data.for_estimator(est)
            assert df.truth.tolist() == truth.tolist()
            assert np.all(df['p2.5'] <= df['p97.5'])
            assert df['index'].tolist() == list(range(1, 9))

    def test_single_realization(self):
        data = scree(ScreeConfig(seed=5, p=6, n=30, replications=1, n_splits=2))
        df = data.for_estimator(LEDOIT_WOLF)
        assert df['mean'].tolist() == df['p2.5'].tolist() == df['p97.5'].tolist()

    def test_csv_columns(self):
        out = io.StringIO()
        scree(ScreeConfig(seed=1, p=5, n=20, replications=2, n_splits=2)).to_csv(out)
        assert out.getvalue().splitlines()[0] == 'estimator,index,truth,mean,p2.5,p97.5'


class TestRateStudy:

    def test_small_ladder(self):
        config = RateConfig(seed=3, ladder=((10, 40), (20, 80), (30, 160), (40, 320)),
                            replications=4, bootstrap=20, grid_subdivisions=4)
        result = rate_study(config)
        assert (result.points.mean_loss > 0).all()
        assert result.predicted_slope == 0.5
        assert result.slope_se >= 0
        assert result.m_prime > 0
        assert list(result.points.p) == [10, 20, 30, 40]
        assert json.loads(result.to_json())['slope'] == result.slope

    def test_slope_matches_loglog_fit(self):
        config = RateConfig(seed=4, ladder=((10, 40), (20, 80), (30, 160), (40, 320)),
                            replications=3, bootstrap=2)
        result = rate_study(config)
        pts = result.points
        expected = np.polyfit(np.log(pts.log_ratio), np.log(pts.mean_loss), 1)[0]
        assert result.slope == approx(expected)

    def test_variances_survive_on_identity(self):
        # on the identity every off-diagonal entry is noise; the calibrated threshold removes it all
        ladder = ((10, 40), (20, 80), (30, 160), (40, 320))
        config = RateConfig(seed=6, ladder=ladder, replications=4, bootstrap=2)
        result = rate_study(config)
        p, n = ladder[0]
        point_seed = derive_seed(6, Purpose.REPLICATION, 0)
        errors = []
        for r in range(4):
            x = sample(SymMatrix.identity(p),
                       SampleSpec(n=n, seed=derive_seed(point_seed, Purpose.REPLICATION, r)))
            errors.append(np.abs(np.diag(sample_covariance(x).values) - 1).max())
        assert result.points.mean_loss[0] == approx(np.mean(errors), rel=1e-9)


class TestCvVsOracle:

    def test_single_point_grid(self):
        truth = build_covariance(ModelSpec(kind='ar1', p=6, rho=0.7))
        x = sample(truth, SampleSpec(n=30, seed=1))
        rec = cv_oracle_record(x, truth, default_scheme(30, 3, 1), TuningGrid((0.0,)))
        assert rec.ratio == 1.0

    def test_ratio_of_zero_losses(self):
        assert frobenius_ratio(0.0, 0.0) == 1.0
        assert frobenius_ratio(2.0, 1.0) == 2.0

    def test_ratios_at_least_one(self):
        result = cv_vs_oracle(CvOracleConfig(seed=8, p=10, n=40, replications=4, n_splits=3))
        assert np.all(result.ratios >= 1 - 1e-12)
        assert result.max >= result.median >= 1 - 1e-12
        assert len(result.df) == 4

    def test_fixed_grid(self):
        result = cv_vs_oracle(CvOracleConfig(seed=8, p=10, n=40, replications=2, n_splits=2,
                                             j_max=0))
        assert result.ratios.tolist() == [1.0, 1.0]


class TestEofPipeline:

    @fixture(scope='class')
    def config(self):
        return EofConfig(seed=11, grid_rows=3, grid_cols=5, n_years=60, missing_rate=0.1,
                         n_components=2, n_splits=3, grid_subdivisions=2)

    def test_shapes(self, config):
        result = eof_pipeline(config)
        assert result.thresholded.eofs.shape == (2, 3, 5)
        assert result.baseline.block_mass.shape == (2, 2)
        np.testing.assert_allclose(result.thresholded.block_mass.sum(axis=1), 1.0)
        assert result.thresholded.negative_mass_fraction >= 0
        assert result.selection is not None

    def test_zero_threshold_without_missing_is_plain_pca(self):
        config = EofConfig(seed=2, grid_rows=3, grid_cols=4, n_years=50, missing_rate=0.0,
                           threshold=0.0, n_components=3)
        result = eof_pipeline(config)
        field = synthetic_spatial_field(3, 4, config.length_scale, 50, 0.0, 2,
                                        config.split_fraction)
        pca = sym_eigen(sample_covariance(field.data))
        np.testing.assert_allclose(result.thresholded.eofs.reshape(3, -1), pca.vectors[:, :3].T,
                                   atol=1e-10)
        np.testing.assert_allclose(result.thresholded.eofs, result.baseline.eofs)

    def test_default_field_has_one_dominant_block(self):
        config = EofConfig(seed=0)
        field = synthetic_spatial_field(config.grid_rows, config.grid_cols, config.length_scale,
                                        config.n_years, config.missing_rate, config.seed,
                                        config.split_fraction)
        assert np.bincount(field.blocks).tolist() == [64, 16]
        leading = [sym_eigen(SymMatrix(field.truth.values[np.ix_(in_block, in_block)])).values[0]
                   for in_block in (field.blocks == 0, field.blocks == 1)]
        assert leading[0] > 1.5 * leading[1]
        truth_eofs = eof_set(field.truth, field, 1)
        assert truth_eofs.block_mass[0].tolist() == approx([1.0, 0.0], abs=1e-12)

    def test_write_rasters(self, config, tmp_path):
        paths = eof_pipeline(config).thresholded.write_rasters(tmp_path, 'eof')
        assert [p.rsplit('_', 1)[1] for p in paths] == ['1.csv', '2.csv']
        raster = pd.read_csv(paths[0], header=None)
        assert raster.shape == (3, 5)
