"""
Simulation studies: loss tables over replications, scree data, empirical convergence rates, the
cross-validation versus oracle comparison, and EOFs of a gridded field with missing entries.

Every study is a pure function of its config. Replication r of a study at dimension p draws all
its randomness from a seed derived from (config seed, p, r), so runs are reproducible for any
thread count.
"""
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple, TypeVar, Union

import numpy as np
import openpyxl
import pandas as pd
from openpyxl.utils.dataframe import dataframe_to_rows

from covthresh.config import FromDictMixin
from covthresh.datagen import (AR1, DIAGONAL, ModelSpec, SampleSpec, SpatialField,
                               build_covariance, permute_variables, sample,
                               synthetic_spatial_field)
from covthresh.errors import InputError, LadderDegenerate, NumericalFailure
from covthresh.estimators import (ObsMatrix, ThresholdSpec, band, ledoit_wolf,
                                  pairwise_covariance, sample_covariance, threshold)
from covthresh.matcore import (CSV_FLOAT_FORMAT, DEFAULT_SOLVER, SOLVERS, EigenDecomp, SymMatrix,
                               check_same_dimension, frobenius_norm, one_norm, operator_norm,
                               sym_eigen)
from covthresh.rng import Purpose, derive_seed, substream, validate_seed
from covthresh.selection import (BANDWIDTH, OFF_DIAGONAL_THRESHOLD, THRESHOLD, SelectionResult,
                                 SplitScheme, TuningGrid, auto_grid, default_scheme, make_grid,
                                 oracle_select, select)

logger = logging.getLogger(__name__)

SAMPLE = 'Sample'
LEDOIT_WOLF = 'Ledoit-Wolf'
BANDING = 'Banding'
BANDING_PERM = 'Banding perm.'
THRESHOLDING = 'Thresholding'
ESTIMATORS = (SAMPLE, LEDOIT_WOLF, BANDING, BANDING_PERM, THRESHOLDING)

MEASURES = ('one_norm', 'operator', 'frobenius', 'lambda_max_abs_err', 'pc1_abs_cos',
            'chosen_param')
SUMMARY_COLUMNS = ['p', 'estimator', 'measure', 'mean', 'se', 'reps']
SCREE_COLUMNS = ['estimator', 'index', 'truth', 'mean', 'p2.5', 'p97.5']

LOSS_TABLE_SPLIT_RULE = 'regularize on round(n / ln n) rows, validate on the other rows'
RATIO_SLACK = 1e-12
BOOTSTRAP_RESAMPLES = 200

R = TypeVar('R')


@dataclass(frozen=True)
class ExperimentKnobs:
    """
    Settings shared by all simulation configs.
    """
    n_splits: int = 10
    grid_subdivisions: int = 10
    threads: int = 1
    eigen_solver: str = DEFAULT_SOLVER

    def _check_knobs(self):
        if self.n_splits < 1:
            raise InputError(f"n_splits must be positive, got {self.n_splits}.")
        if self.grid_subdivisions < 1:
            raise InputError(f"grid_subdivisions must be positive, got {self.grid_subdivisions}.")
        if self.threads < 1:
            raise InputError(f"threads must be positive, got {self.threads}.")
        if self.eigen_solver not in SOLVERS:
            raise InputError(f"eigen_solver: Expected one of {SOLVERS}, got "
                             f"'{self.eigen_solver}'.")


@dataclass(frozen=True)
class Table1Config(ExperimentKnobs, FromDictMixin):
    seed: Optional[int] = None
    p_list: Tuple[int, ...] = (30, 100, 200)
    n: int = 100
    replications: int = 100
    rho: float = 0.7

    def __post_init__(self):
        self._check_knobs()
        validate_seed(self.seed)
        if self.replications < 2:
            raise InputError(f"At least 2 replications are needed, got {self.replications}.")
        if not self.p_list or min(self.p_list) < 2:
            raise InputError(f"p_list must hold dimensions of at least 2, got {self.p_list}.")


@dataclass(frozen=True)
class ScreeConfig(ExperimentKnobs, FromDictMixin):
    """
    A single replication gives the scree data of one realization.
    """
    seed: Optional[int] = None
    p: int = 100
    n: int = 100
    replications: int = 30
    rho: float = 0.7

    def __post_init__(self):
        self._check_knobs()
        validate_seed(self.seed)
        if self.replications < 1:
            raise InputError(f"At least 1 replication is needed, got {self.replications}.")
        if self.p < 2:
            raise InputError(f"p must be at least 2, got {self.p}.")


@dataclass(frozen=True)
class RateConfig(ExperimentKnobs, FromDictMixin):
    """
    :param q_model: Truth as a ModelSpec without p, e.g. {"kind": "ar1", "rho": 0.5}; the default
        {"kind": "diagonal"} is the identity.
    :param q: Sparsity index of the truth; the predicted slope is (1 - q) / 2.
    """
    seed: Optional[int] = None
    ladder: Tuple[Tuple[int, int], ...] = ((50, 200), (100, 400), (200, 800), (400, 1600))
    replications: int = 30
    q_model: Dict = field(default_factory=lambda: {'kind': DIAGONAL})
    q: float = 0.0
    bootstrap: int = BOOTSTRAP_RESAMPLES

    def __post_init__(self):
        self._check_knobs()
        validate_seed(self.seed)
        ladder = tuple(tuple(int(v) for v in point) for point in self.ladder)
        object.__setattr__(self, 'ladder', ladder)
        if len(ladder) < 4:
            raise LadderDegenerate(f"A rate ladder needs at least 4 (p, n) points, got "
                                   f"{len(ladder)}.")
        if any(p < 2 or n < 2 for p, n in ladder):
            raise InputError(f"Every ladder point needs p >= 2 and n >= 2, got {ladder}.")
        x = [math.log(math.log(p) / n) for p, n in ladder]
        if max(x) - min(x) == 0:
            raise LadderDegenerate("ln p / n is the same at every ladder point; the slope is "
                                   "undefined.")
        if self.replications < 2:
            raise InputError(f"At least 2 replications are needed, got {self.replications}.")
        if 'p' in self.q_model:
            raise InputError("q_model must not set p; it comes from the ladder.")

    def truth(self, p: int) -> SymMatrix:
        spec = dict(self.q_model, p=p)
        if spec['kind'] == DIAGONAL and 'values' not in spec:
            spec['values'] = (1.0,) * p
        return build_covariance(ModelSpec.from_dict(spec), self.eigen_solver)


@dataclass(frozen=True)
class CvOracleConfig(ExperimentKnobs, FromDictMixin):
    """
    :param j_max: Upper end of the threshold grid; derived from the data when not given.
    """
    seed: Optional[int] = None
    p: int = 100
    n: int = 100
    replications: int = 50
    rho: float = 0.7
    j_max: Optional[int] = None

    def __post_init__(self):
        self._check_knobs()
        validate_seed(self.seed)
        if self.replications < 1:
            raise InputError(f"At least 1 replication is needed, got {self.replications}.")


@dataclass(frozen=True)
class EofConfig(ExperimentKnobs, FromDictMixin):
    """
    The default field puts 64 locations in one block and 16 in the other, so its leading EOF lies
    in the larger block.
    :param threshold: 'cv' (cross-validated on the incomplete data), 'oracle' (closest to the true
        field covariance), or a fixed threshold value.
    """
    seed: Optional[int] = None
    grid_rows: int = 8
    grid_cols: int = 10
    length_scale: float = 2.0
    n_years: int = 400
    missing_rate: float = 0.05
    split_fraction: float = 0.75
    n_components: int = 3
    threshold: Union[str, float] = 'cv'
    min_threshold: Optional[float] = None

    def __post_init__(self):
        self._check_knobs()
        validate_seed(self.seed)
        if isinstance(self.threshold, str):
            if self.threshold not in ('cv', 'oracle'):
                raise InputError(f"threshold: Expected 'cv', 'oracle' or a number, got "
                                 f"'{self.threshold}'.")
        elif not self.threshold >= 0:
            raise InputError(f"A fixed threshold must be nonnegative, got {self.threshold}.")
        if not 1 <= self.n_components <= self.grid_rows * self.grid_cols:
            raise InputError(f"n_components must lie in [1, {self.grid_rows * self.grid_cols}], "
                             f"got {self.n_components}.")


@dataclass(frozen=True)
class LossRecord:
    estimator: str
    one_norm_loss: float
    op_norm_loss: float
    frob_loss: float
    lambda_max_abs_err: float
    pc1_abs_cos: float
    chosen_param: Optional[float] = None

    def measures(self) -> Dict[str, float]:
        """
        Measure name to value; chosen_param only for estimators with a tuning parameter.
        """
        out = {'one_norm': self.one_norm_loss,
               'operator': self.op_norm_loss,
               'frobenius': self.frob_loss,
               'lambda_max_abs_err': self.lambda_max_abs_err,
               'pc1_abs_cos': self.pc1_abs_cos}
        if self.chosen_param is not None:
            out['chosen_param'] = self.chosen_param
        return out


def compute_losses(estimate: SymMatrix, truth: SymMatrix, label: str,
                   chosen_param: Optional[float] = None, solver: str = DEFAULT_SOLVER,
                   truth_eigen: Optional[EigenDecomp] = None) -> LossRecord:
    """
    Distances between estimate and truth in the (1,1), operator and Frobenius norms, the error in
    the largest eigenvalue, and |cos| of the angle between the leading eigenvectors.
    :param truth_eigen: Decomposition of truth, if already at hand.
    """
    check_same_dimension(estimate, truth)
    diff = estimate - truth
    est_eigen = sym_eigen(estimate, solver)
    truth_eigen = truth_eigen if truth_eigen is not None else sym_eigen(truth, solver)
    cos = abs(float(est_eigen.vectors[:, 0] @ truth_eigen.vectors[:, 0]))
    return LossRecord(estimator=label,
                      one_norm_loss=one_norm(diff),
                      op_norm_loss=operator_norm(diff, solver),
                      frob_loss=frobenius_norm(diff),
                      lambda_max_abs_err=abs(est_eigen.lambda_max - truth_eigen.lambda_max),
                      pc1_abs_cos=min(cos, 1.0),
                      chosen_param=chosen_param)


class SummaryTable:
    """
    Mean and standard error of every (p, estimator, measure) over replications.

    Rows live in a pandas.DataFrame with columns p, estimator, measure, mean, se, reps. The
    standard error is the sample standard deviation (divisor reps - 1) over sqrt(reps).
    """

    def __init__(self, df: pd.DataFrame, metadata: Optional[dict] = None):
        missing = [c for c in SUMMARY_COLUMNS if c not in df.columns]
        if missing:
            raise InputError(f"Summary table lacks columns {missing}.")
        self._df = df[SUMMARY_COLUMNS].reset_index(drop=True)
        self.metadata = dict(metadata or {})

    @classmethod
    def from_records(cls, records: Dict[int, Sequence[Sequence[LossRecord]]],
                     metadata: Optional[dict] = None) -> 'SummaryTable':
        """
        :param records: For each p, one list of LossRecords per replication, in replication order.
        """
        rows = []
        for p, reps in records.items():
            by_estimator: Dict[str, Dict[str, List[float]]] = {}
            for rep in reps:
                for rec in rep:
                    measures = by_estimator.setdefault(rec.estimator, {})
                    for name, value in rec.measures().items():
                        measures.setdefault(name, []).append(value)
            for estimator, measures in by_estimator.items():
                for name in MEASURES:
                    if name not in measures:
                        continue
                    values = np.array(measures[name])
                    se = values.std(ddof=1) / math.sqrt(values.size) if values.size > 1 else 0.0
                    rows.append({'p': int(p), 'estimator': estimator, 'measure': name,
                                 'mean': float(values.mean()), 'se': float(se),
                                 'reps': int(values.size)})
        return cls(pd.DataFrame(rows, columns=SUMMARY_COLUMNS), metadata)

    def __len__(self):
        return len(self._df)

    def __repr__(self):
        return f"{self.__class__.__name__}, {len(self)} rows over p={sorted(set(self._df.p))}."

    @property
    def df(self) -> pd.DataFrame:
        return self._df.copy()

    def value(self, p: int, estimator: str, measure: str) -> Tuple[float, float]:
        """
        (mean, se) of one cell.
        """
        df = self._df
        hit = df[(df.p == p) & (df.estimator == estimator) & (df.measure == measure)]
        if hit.empty:
            raise KeyError(f"No row for p={p}, estimator '{estimator}', measure '{measure}'.")
        return float(hit['mean'].iloc[0]), float(hit['se'].iloc[0])

    def to_csv(self, stream: TextIO) -> None:
        self._df.to_csv(stream, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')

    def to_json(self) -> str:
        return json.dumps({'metadata': self.metadata,
                           'rows': self._df.to_dict(orient='records')}, indent=2)

    def to_excel(self, path) -> None:
        """
        Workbook with a single sheet: one metadata line per key, a blank line, then the table.
        """
        wb = openpyxl.Workbook()
        ws = wb.active
        ws.title = 'summary'
        for key, value in self.metadata.items():
            ws.append([key, json.dumps(value)])
        if self.metadata:
            ws.append([])
        for row in dataframe_to_rows(self._df, index=False, header=True):
            ws.append(row)
        wb.save(path)


class ScreeData:
    """
    Per estimator and eigenvalue index: the true eigenvalue, the mean estimate over replications
    and its 2.5% and 97.5% percentiles (linear interpolation between order statistics).
    """

    def __init__(self, df: pd.DataFrame):
        self._df = df[SCREE_COLUMNS].reset_index(drop=True)

    @classmethod
    def from_spectra(cls, truth: np.ndarray,
                     spectra: Dict[str, Sequence[np.ndarray]]) -> 'ScreeData':
        frames = []
        for label, per_rep in spectra.items():
            a = np.vstack(per_rep)
            lo, hi = np.percentile(a, [2.5, 97.5], axis=0)
            frames.append(pd.DataFrame({'estimator': label,
                                        'index': np.arange(1, a.shape[1] + 1),
                                        'truth': truth,
                                        'mean': a.mean(axis=0),
                                        'p2.5': lo,
                                        'p97.5': hi}))
        return cls(pd.concat(frames, ignore_index=True))

    def __repr__(self):
        return f"{self.__class__.__name__}, estimators {self.estimators}."

    @property
    def df(self) -> pd.DataFrame:
        return self._df.copy()

    @property
    def estimators(self) -> List[str]:
        return list(dict.fromkeys(self._df.estimator))

    def for_estimator(self, label: str) -> pd.DataFrame:
        return self._df[self._df.estimator == label].reset_index(drop=True)

    def to_csv(self, stream: TextIO) -> None:
        self._df.to_csv(stream, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')

    def to_json(self) -> str:
        return json.dumps(self._df.to_dict(orient='records'), indent=2)


def _run_replications(fn: Callable[[int], R], count: int, threads: int) -> List[R]:
    """
    fn(0), ..., fn(count - 1) in index order, on a thread pool when threads > 1.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))
    return [fn(r) for r in range(count)]


def _replication_seed(seed: int, p: int, r: int) -> int:
    return derive_seed(derive_seed(seed, Purpose.REPLICATION, p), Purpose.REPLICATION, r)


@dataclass(frozen=True)
class _Estimate:
    label: str
    matrix: SymMatrix
    truth: SymMatrix
    chosen: Optional[float] = None


def _ar1_truth(p: int, rho: float, solver: str) -> SymMatrix:
    return build_covariance(ModelSpec(kind=AR1, p=p, rho=rho), solver)


def loss_table_scheme(n: int, n_splits: int, seed: int) -> SplitScheme:
    """
    Splits used by the loss table and scree studies: the band width and threshold are fitted on
    round(n / ln n) rows and validated on the remaining rows.
    """
    return default_scheme(n, n_splits, seed).swapped()


def _five_estimates(truth: SymMatrix, n: int, seed: int,
                    knobs: ExperimentKnobs) -> List[_Estimate]:
    """
    Sample, Ledoit-Wolf, banding and thresholding with cross-validated parameters, and banding
    after a random reordering of the variables (compared with the reordered truth).
    """
    x = sample(truth, SampleSpec(n=n, seed=seed))
    s = sample_covariance(x)
    scheme = loss_table_scheme(n, knobs.n_splits, seed)
    p = truth.p

    band_grid = make_grid(p, n, p - 1, BANDWIDTH)
    k = select(x, band_grid, scheme).chosen

    xp, perm = permute_variables(x, seed)
    sp = sample_covariance(xp)
    k_perm = select(xp, band_grid, scheme).chosen

    thr_grid = auto_grid(s, n, THRESHOLD, knobs.grid_subdivisions)
    t = select(x, thr_grid, scheme).chosen
    logger.debug("p=%d: band width %g, permuted band width %g, threshold %.4g", p, k, k_perm, t)

    return [_Estimate(SAMPLE, s, truth),
            _Estimate(LEDOIT_WOLF, ledoit_wolf(x), truth),
            _Estimate(BANDING, band(s, int(k)), truth, k),
            _Estimate(BANDING_PERM, band(sp, int(k_perm)), truth.permute(perm), k_perm),
            _Estimate(THRESHOLDING, threshold(s, t), truth, t)]


def run_table1(config: Table1Config) -> SummaryTable:
    """
    Loss table of the five estimators on AR(1) data, with the cross-validated band widths and
    thresholds as 'chosen_param' rows.
    """
    records: Dict[int, List[List[LossRecord]]] = {}
    for p in config.p_list:
        logger.info("Loss table: p=%d, n=%d, %d replications", p, config.n, config.replications)
        truth = _ar1_truth(p, config.rho, config.eigen_solver)
        truth_eigen = sym_eigen(truth, config.eigen_solver)

        def one(r: int) -> List[LossRecord]:
            out = []
            for est in _five_estimates(truth, config.n, _replication_seed(config.seed, p, r),
                                       config):
                eig = truth_eigen if est.truth is truth else None
                out.append(compute_losses(est.matrix, est.truth, est.label, est.chosen,
                                          config.eigen_solver, eig))
            return out

        records[p] = _run_replications(one, config.replications, config.threads)
        logger.info("Loss table: p=%d done", p)
    metadata = {'config': config.to_dict(), 'split_rule': LOSS_TABLE_SPLIT_RULE,
                'threshold_grid_step': 'sqrt(ln p / n) / grid_subdivisions'}
    return SummaryTable.from_records(records, metadata)


def scree(config: ScreeConfig) -> ScreeData:
    """
    Mean and percentile band of the sorted eigenvalues of each estimator on AR(1) data.
    """
    truth = _ar1_truth(config.p, config.rho, config.eigen_solver)
    truth_values = sym_eigen(truth, config.eigen_solver).values

    def one(r: int) -> Dict[str, np.ndarray]:
        ests = _five_estimates(truth, config.n, _replication_seed(config.seed, config.p, r), config)
        return {est.label: sym_eigen(est.matrix, config.eigen_solver).values for est in ests}

    logger.info("Scree: p=%d, n=%d, %d replications", config.p, config.n, config.replications)
    per_rep = _run_replications(one, config.replications, config.threads)
    spectra = {label: [rep[label] for rep in per_rep] for label in ESTIMATORS}
    return ScreeData.from_spectra(np.array(truth_values), spectra)


@dataclass(frozen=True)
class RateResult:
    """
    Fitted exponent of the mean operator-norm loss in ln p / n, with its bootstrap standard error
    and the per-point losses.
    """
    slope: float
    slope_se: float
    predicted_slope: float
    m_prime: float
    points: pd.DataFrame

    def to_csv(self, stream: TextIO) -> None:
        self.points.to_csv(stream, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')

    def to_dict(self) -> dict:
        return {'slope': self.slope, 'slope_se': self.slope_se,
                'predicted_slope': self.predicted_slope, 'm_prime': self.m_prime,
                'points': self.points.to_dict(orient='records')}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _loglog_slope(log_ratio: np.ndarray, mean_loss: np.ndarray) -> float:
    return float(np.polyfit(log_ratio, np.log(mean_loss), 1)[0])


def rate_study(config: RateConfig) -> RateResult:
    """
    Operator-norm loss of thresholding at M' sqrt(ln p / n) along a (p, n) ladder. M' is
    calibrated once, as the mean oracle threshold over sqrt(ln p / n) at the first ladder point.
    Calibration and evaluation both leave the diagonal unthresholded.
    """
    solver = config.eigen_solver

    def estimates(index: int, p: int, n: int):
        truth = config.truth(p)
        point_seed = derive_seed(config.seed, Purpose.REPLICATION, index)

        def one(r: int) -> SymMatrix:
            x = sample(truth, SampleSpec(n=n, seed=derive_seed(point_seed, Purpose.REPLICATION, r)))
            return sample_covariance(x)
        return truth, _run_replications(one, config.replications, config.threads)

    p0, n0 = config.ladder[0]
    truth0, covs0 = estimates(0, p0, n0)
    scale0 = math.sqrt(math.log(p0) / n0)
    chosen = [oracle_select(s, truth0, auto_grid(s, n0, THRESHOLD, config.grid_subdivisions),
                            OFF_DIAGONAL_THRESHOLD).chosen for s in covs0]
    m_prime = float(np.mean(chosen)) / scale0
    logger.info("Rate study: M' = %.4g calibrated at p=%d, n=%d", m_prime, p0, n0)

    losses = []
    rows = []
    for index, (p, n) in enumerate(config.ladder):
        truth, covs = (truth0, covs0) if index == 0 else estimates(index, p, n)
        t = m_prime * math.sqrt(math.log(p) / n)
        spec = ThresholdSpec(t, keep_diagonal=True)
        point_losses = np.array([operator_norm(threshold(s, spec) - truth, solver) for s in covs])
        losses.append(point_losses)
        rows.append({'p': p, 'n': n, 'log_ratio': math.log(p) / n, 'threshold': t,
                     'mean_loss': float(point_losses.mean()),
                     'se_loss': float(point_losses.std(ddof=1) / math.sqrt(point_losses.size))})
        logger.info("Rate study: p=%d, n=%d, mean loss %.4g", p, n, rows[-1]['mean_loss'])

    points = pd.DataFrame(rows)
    x = np.log(points['log_ratio'].to_numpy())
    slope = _loglog_slope(x, points['mean_loss'].to_numpy())

    gen = substream(config.seed, Purpose.BOOTSTRAP)
    boot = np.empty(config.bootstrap)
    for b in range(config.bootstrap):
        means = [ls[gen.integers(0, ls.size, ls.size)].mean() for ls in losses]
        boot[b] = _loglog_slope(x, np.array(means))
    slope_se = float(boot.std(ddof=1)) if config.bootstrap > 1 else 0.0

    return RateResult(slope=slope, slope_se=slope_se, predicted_slope=(1.0 - config.q) / 2.0,
                      m_prime=m_prime, points=points)


def frobenius_ratio(loss_cv: float, loss_oracle: float) -> float:
    """
    loss_cv / loss_oracle, taken as 1 when both are 0.
    """
    if loss_oracle == 0:
        return 1.0 if loss_cv == 0 else math.inf
    return loss_cv / loss_oracle


@dataclass(frozen=True)
class CvOracleRecord:
    chosen_cv: float
    chosen_oracle: float
    loss_cv: float
    loss_oracle: float
    ratio: float


def cv_oracle_record(x: ObsMatrix, truth: SymMatrix, scheme: SplitScheme,
                     grid: Optional[TuningGrid] = None, subdivisions: int = 1) -> CvOracleRecord:
    """
    Frobenius losses of the cross-validated and the oracle threshold, both taken from the same
    grid built on the full-sample covariance.
    :raises NumericalFailure: if the cross-validated loss falls below the oracle loss.
    """
    s = sample_covariance(x)
    grid = grid if grid is not None else auto_grid(s, x.n, THRESHOLD, subdivisions)
    cv = select(x, grid, scheme)
    orc = oracle_select(s, truth, grid)
    loss_cv = frobenius_norm(threshold(s, cv.chosen) - truth)
    loss_oracle = frobenius_norm(threshold(s, orc.chosen) - truth)
    ratio = frobenius_ratio(loss_cv, loss_oracle)
    if ratio < 1.0 - RATIO_SLACK:
        raise NumericalFailure(f"Cross-validated loss {loss_cv:.17g} is below the oracle loss "
                               f"{loss_oracle:.17g} on the same grid.")
    return CvOracleRecord(cv.chosen, orc.chosen, loss_cv, loss_oracle, ratio)


@dataclass(frozen=True)
class CvOracleResult:
    records: Tuple[CvOracleRecord, ...]

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.records])

    @property
    def mean(self) -> float:
        return float(self.ratios.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.ratios))

    @property
    def max(self) -> float:
        return float(self.ratios.max())

    @property
    def df(self) -> pd.DataFrame:
        df = pd.DataFrame([asdict(r) for r in self.records])
        df.insert(0, 'replication', np.arange(len(df)))
        return df

    def to_csv(self, stream: TextIO) -> None:
        self.df.to_csv(stream, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')

    def to_json(self) -> str:
        return json.dumps({'mean': self.mean, 'median': self.median, 'max': self.max,
                           'ratios': self.ratios.tolist()}, indent=2)


def cv_vs_oracle(config: CvOracleConfig) -> CvOracleResult:
    """
    Ratio of Frobenius losses, cross-validated over oracle threshold, per replication on AR(1)
    data.
    """
    truth = _ar1_truth(config.p, config.rho, config.eigen_solver)

    def one(r: int) -> CvOracleRecord:
        seed = _replication_seed(config.seed, config.p, r)
        x = sample(truth, SampleSpec(n=config.n, seed=seed))
        grid = None
        if config.j_max is not None:
            grid = make_grid(config.p, config.n, config.j_max, THRESHOLD, config.grid_subdivisions)
        return cv_oracle_record(x, truth, default_scheme(config.n, config.n_splits, seed), grid,
                                config.grid_subdivisions)

    logger.info("CV versus oracle: p=%d, n=%d, %d replications", config.p, config.n,
                config.replications)
    return CvOracleResult(tuple(_run_replications(one, config.replications, config.threads)))


@dataclass(frozen=True)
class EofSet:
    """
    Leading eigenvectors of a field covariance reshaped to the grid, with their share of the total
    variance, the squared mass each puts on the two blocks, and the share of the absolute spectrum
    carried by negative eigenvalues.
    """
    eofs: np.ndarray
    eigenvalues: np.ndarray
    variance_fractions: np.ndarray
    block_mass: np.ndarray
    negative_mass_fraction: float

    def write_rasters(self, out_dir, prefix: str) -> List[str]:
        """
        One CSV raster per component, named <prefix>_<k>.csv with k counted from 1.
        """
        paths = []
        for k, eof in enumerate(self.eofs, start=1):
            path = os.path.join(out_dir, f'{prefix}_{k}.csv')
            np.savetxt(path, eof, fmt=CSV_FLOAT_FORMAT, delimiter=',')
            paths.append(path)
        return paths

    def to_dict(self) -> dict:
        return {'eigenvalues': self.eigenvalues.tolist(),
                'variance_fractions': self.variance_fractions.tolist(),
                'block_mass': self.block_mass.tolist(),
                'negative_mass_fraction': self.negative_mass_fraction}


def eof_set(m: SymMatrix, field_: SpatialField, n_components: int,
            solver: str = DEFAULT_SOLVER) -> EofSet:
    eig = sym_eigen(m, solver)
    values = eig.values
    total_abs = float(np.abs(values).sum())
    negative = float(-values[values < 0].sum())
    if negative > 0:
        logger.warning("Field covariance has %d negative eigenvalues carrying %.3g%% of the "
                       "absolute spectrum", int(np.sum(values < 0)), 100 * negative / total_abs)
    vecs = eig.vectors[:, :n_components]
    mass = np.stack([np.sum(vecs[field_.blocks == b] ** 2, axis=0) for b in (0, 1)], axis=1)
    trace = float(np.trace(m.values))
    return EofSet(eofs=vecs.T.reshape((n_components,) + field_.grid_shape),
                  eigenvalues=np.array(values[:n_components]),
                  variance_fractions=np.array(values[:n_components]) / trace,
                  block_mass=mass,
                  negative_mass_fraction=negative / total_abs if total_abs > 0 else 0.0)


@dataclass(frozen=True)
class EofResult:
    """
    EOFs of the thresholded pairwise covariance, and of the untreated one for comparison.
    """
    threshold: float
    thresholded: EofSet
    baseline: EofSet
    selection: Optional[SelectionResult] = None

    def to_dict(self) -> dict:
        return {'threshold': self.threshold,
                'thresholded': self.thresholded.to_dict(),
                'baseline': self.baseline.to_dict(),
                'selection': self.selection.to_dict() if self.selection else None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def eof_pipeline(config: EofConfig, field_: Optional[SpatialField] = None) -> EofResult:
    """
    Pairwise covariance of a gridded field with missing entries, thresholded, then decomposed.
    :param field_: Field to analyse; drawn from config when not given.
    """
    if field_ is None:
        field_ = synthetic_spatial_field(config.grid_rows, config.grid_cols, config.length_scale,
                                         config.n_years, config.missing_rate, config.seed,
                                         config.split_fraction)
    x = field_.data
    s = pairwise_covariance(x)
    selection = None
    if config.threshold == 'cv':
        grid = auto_grid(s, x.n, THRESHOLD, config.grid_subdivisions)
        scheme = default_scheme(x.n, config.n_splits, derive_seed(config.seed, Purpose.SPLITS))
        selection = select(x, grid, scheme, covariance='pairwise',
                           min_threshold=config.min_threshold, threads=config.threads)
        t = selection.chosen
    elif config.threshold == 'oracle':
        selection = oracle_select(s, field_.truth,
                                  auto_grid(s, x.n, THRESHOLD, config.grid_subdivisions))
        t = selection.chosen
    else:
        t = float(config.threshold)
    logger.info("EOF pipeline: threshold %.4g on a %dx%d field", t, *field_.grid_shape)
    return EofResult(threshold=t,
                     thresholded=eof_set(threshold(s, t), field_, config.n_components,
                                         config.eigen_solver),
                     baseline=eof_set(s, field_, config.n_components, config.eigen_solver),
                     selection=selection)
