from covthresh.matcore import SymMatrix, EigenDecomp, sym_eigen, one_norm, operator_norm, \
    frobenius_norm, min_eigenvalue, is_positive_definite, cholesky
from covthresh.estimators import ObsMatrix, ThresholdSpec, HeavyTailParams, sample_covariance, \
    pairwise_covariance, threshold, band, ledoit_wolf, ledoit_wolf_shrinkage, \
    gaussian_threshold, heavy_tail_threshold, pd_margin_check, inverse_estimate
from covthresh.sparsity import SparsityProfile, DecayClassParams, sparsity_radius, profile, \
    decay_class_check, decay_class_radius_bound, operator_rate, frobenius_rate, heavy_tail_rate, \
    band_rate
from covthresh.selection import SplitScheme, TuningGrid, SelectionResult, make_grid, auto_grid, \
    default_scheme, cv_risk, select, oracle_select
from covthresh.datagen import ModelSpec, SampleSpec, build_covariance, sample, \
    permute_variables, synthetic_spatial_field
from covthresh.readers import read_obs_csv, read_sym_csv

__version__ = "0.1.0"
