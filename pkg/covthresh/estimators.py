"""
Covariance estimators: sample and pairwise-complete covariance, hard thresholding, banding,
Ledoit-Wolf shrinkage, theoretical thresholds, and the perturbation test for positive definiteness.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, TextIO, Union

import numpy as np
import pandas as pd

from covthresh.errors import (DimensionTooSmall, InputError, InsufficientOverlap, MissingData,
                              NotPositiveDefinite, NumericalFailure, TooFewSamples)
from covthresh.matcore import (DEFAULT_SOLVER, CSV_FLOAT_FORMAT, SymMatrix, check_same_dimension,
                               cholesky, min_eigenvalue, operator_norm)

logger = logging.getLogger(__name__)

MISSING_MARKERS_ON_READ = ['NA', 'NaN', 'nan', '']
MISSING_MARKER_ON_WRITE = 'NA'
INVERSE_MIN_EIGENVALUE = 1e-10


class ObsMatrix:
    """
    Container for n observations (rows) of p variables (columns). Missing entries are NaN.

    The observations live in a pandas.DataFrame whose column labels name the variables; rows are
    taken to be i.i.d. samples.
    """

    def __init__(self, data: Union[pd.DataFrame, np.ndarray, Sequence[Sequence[float]]],
                 columns: Optional[Sequence[str]] = None):
        """
        :param data: DataFrame or n x p array of observations. NaN marks a missing entry.
        :param columns: Variable names. Defaults to the DataFrame's columns, else 'x0', 'x1', ...
        """
        if isinstance(data, pd.DataFrame):
            df = data.copy()
            if columns is not None:
                df.columns = list(columns)
        else:
            a = np.array(data, dtype=float)
            if a.ndim == 1:
                a = a.reshape(-1, 1)
            if columns is None:
                columns = [f'x{j}' for j in range(a.shape[1] if a.ndim == 2 else 0)]
            df = pd.DataFrame(a, columns=list(columns))
        if df.ndim != 2 or df.shape[0] < 1 or df.shape[1] < 1:
            raise InputError(f"Expected a nonempty n x p observation matrix, got shape {df.shape}.")
        try:
            df = df.astype(float)
        except (TypeError, ValueError) as e:
            raise InputError("Observation matrix contains non-numeric entries.") from e
        if np.isinf(df.values).any():
            i, j = np.argwhere(np.isinf(df.values))[0]
            raise InputError(f"Infinite entry in row {i}, column '{df.columns[j]}'.")
        df.reset_index(drop=True, inplace=True)
        self._df = df

    def __len__(self):
        """
        Number of observations, consistent with pandas.DataFrame.__len__
        """
        return len(self._df)

    def __repr__(self):
        return f"{self.__class__.__name__}, n={self.n}, p={self.p}, " \
               f"{int(self.missing_mask.sum())} missing entries."

    @property
    def n(self) -> int:
        return self._df.shape[0]

    @property
    def p(self) -> int:
        return self._df.shape[1]

    @property
    def df(self) -> pd.DataFrame:
        """
        Copy of the underlying DataFrame.
        """
        return self._df.copy()

    @property
    def col_names(self) -> List[str]:
        return list(self._df.columns)

    @property
    def values(self) -> np.ndarray:
        return self._df.to_numpy(dtype=float, copy=True)

    @property
    def missing_mask(self) -> np.ndarray:
        return self._df.isna().to_numpy()

    @property
    def has_missing(self) -> bool:
        return bool(self.missing_mask.any())

    def take_rows(self, rows: Sequence[int]) -> 'ObsMatrix':
        return ObsMatrix(self._df.iloc[list(rows)])

    def take_columns(self, cols: Sequence[int]) -> 'ObsMatrix':
        return ObsMatrix(self._df.iloc[:, list(cols)])

    def to_csv(self, stream: TextIO, header: bool = True) -> None:
        """
        Write comma-separated observations, missing entries as 'NA'.
        """
        self._df.to_csv(stream, header=header, index=False, na_rep=MISSING_MARKER_ON_WRITE,
                        float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


@dataclass(frozen=True)
class ThresholdSpec:
    s: float
    keep_diagonal: bool = False

    def __post_init__(self):
        if not math.isfinite(self.s) or self.s < 0:
            raise InputError(f"Threshold must be a finite nonnegative number, got {self.s}.")


@dataclass(frozen=True)
class HeavyTailParams:
    gamma: float
    scale_M: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError(f"gamma must be positive, got {self.gamma}.")
        if not self.scale_M > 0:
            raise InputError(f"scale_M must be positive, got {self.scale_M}.")


def complete_values(x: ObsMatrix) -> np.ndarray:
    """
    Observation array of x, refusing data with missing entries or fewer than two rows.
    """
    if x.n < 2:
        raise TooFewSamples(f"At least 2 observations are needed, got {x.n}.")
    a = x.values
    missing = np.isnan(a)
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise MissingData(f"Missing entry in row {i}, column '{x.col_names[j]}'; use "
                          f"pairwise_covariance for incomplete data.")
    return a


def sample_covariance(x: ObsMatrix, assume_centered: bool = False) -> SymMatrix:
    """
    Empirical covariance with divisor n (not n - 1).
    :param assume_centered: If True, skip mean removal; gives the covariance with known zero mean.
    """
    a = complete_values(x)
    if not assume_centered:
        a = a - a.mean(axis=0)
    return SymMatrix(a.T @ a / a.shape[0], symmetrize=True)


def pairwise_covariance(x: ObsMatrix) -> SymMatrix:
    """
    Covariance from all rows available for each pair of variables.

    Entry (i, j) is the divisor-n covariance over the rows where both i and j are present, centred
    by means taken over those same rows. The result is symmetric but need not be positive
    semidefinite.
    :raises InsufficientOverlap: naming the first pair (row-major, i <= j) with fewer than 2
        shared rows.
    """
    a = x.values
    present = ~np.isnan(a)
    if present.all():
        return sample_covariance(x)

    m = present.astype(float)
    counts = m.T @ m
    short = np.argwhere(np.triu(counts < 2))
    if short.size:
        i, j = short[0]
        raise InsufficientOverlap(int(i), int(j), int(counts[i, j]))

    # Shifting each column by a constant leaves covariances unchanged and keeps the
    # moment formula below well conditioned.
    z = np.where(present, a - np.nanmean(a, axis=0), 0.0)
    cross = z.T @ z
    sums = z.T @ m
    means_i = sums / counts
    cov = cross / counts - means_i * means_i.T
    return SymMatrix(cov, symmetrize=True)


def threshold(m: SymMatrix, spec: Union[ThresholdSpec, float]) -> SymMatrix:
    """
    Hard thresholding: keeps entry m_ij iff |m_ij| >= s, zeroes it otherwise.
    :param spec: ThresholdSpec, or a bare threshold s (diagonal then thresholded like any entry).
    """
    if not isinstance(spec, ThresholdSpec):
        spec = ThresholdSpec(float(spec))
    a = m.values
    out = np.where(np.abs(a) >= spec.s, a, 0.0)
    if spec.keep_diagonal:
        np.fill_diagonal(out, np.diag(a))
    return SymMatrix(out)


def band(m: SymMatrix, k: int) -> SymMatrix:
    """
    Banding: zeroes entries more than k positions away from the diagonal.
    """
    if k < 0 or int(k) != k:
        raise InputError(f"Band width must be a nonnegative integer, got {k}.")
    idx = np.arange(m.p)
    keep = np.abs(idx[:, None] - idx[None, :]) <= k
    return SymMatrix(np.where(keep, m.values, 0.0))


def gaussian_threshold(p: int, n: int, m_prime: float) -> float:
    """
    Theoretical threshold m_prime * sqrt(ln p / n) for Gaussian data. m_prime has no default;
    cross-validation is the practical way to pick a threshold.
    """
    if p < 2:
        raise DimensionTooSmall(f"gaussian_threshold needs p >= 2 so that ln p > 0, got p={p}.")
    if n < 1:
        raise InputError(f"Sample size must be positive, got {n}.")
    return m_prime * math.sqrt(math.log(p) / n)


def heavy_tail_threshold(p: int, n: int, params: HeavyTailParams) -> float:
    """
    Threshold scale_M * p^(2/(1+gamma)) / sqrt(n) for data with 2(1+gamma) finite moments.
    """
    if p < 1 or n < 1:
        raise InputError(f"p and n must be positive, got p={p}, n={n}.")
    return params.scale_M * p ** (2.0 / (1.0 + params.gamma)) / math.sqrt(n)


def ledoit_wolf_shrinkage(x: ObsMatrix) -> float:
    """
    Ledoit-Wolf intensity rho* in [0, 1] for shrinking the sample covariance toward mu * I.
    """
    a = complete_values(x)
    n, p = a.shape
    xc = a - a.mean(axis=0)
    s = xc.T @ xc / n
    mu = np.trace(s) / p
    d2 = np.sum((s - mu * np.eye(p)) ** 2) / p
    if d2 == 0:
        return 0.0
    # sum_k ||x_k x_k^T - S||_F^2 = sum_k |x_k|^4 - n ||S||_F^2
    spread = np.sum(np.sum(xc ** 2, axis=1) ** 2) - n * np.sum(s ** 2)
    b_bar2 = max(spread, 0.0) / (n ** 2 * p)
    b2 = min(b_bar2, d2)
    return float(min(1.0, b2 / d2))


def ledoit_wolf(x: ObsMatrix) -> SymMatrix:
    """
    Ledoit-Wolf shrinkage estimator rho* mu I + (1 - rho*) S, with S the divisor-n sample
    covariance and mu = trace(S) / p. Shares its eigenvectors with S.
    """
    s = sample_covariance(x)
    rho = ledoit_wolf_shrinkage(x)
    mu = np.trace(s.values) / s.p
    logger.debug("Ledoit-Wolf intensity %.6g, target scale %.6g", rho, mu)
    return SymMatrix(rho * mu * np.eye(s.p) + (1.0 - rho) * s.values, symmetrize=True)


def pd_margin_check(original: SymMatrix, thresholded: SymMatrix,
                    solver: str = DEFAULT_SOLVER) -> bool:
    """
    Sufficient test for positive definiteness of a perturbed matrix: true iff
    ||thresholded - original|| < lambda_min(original). A false result says nothing.
    """
    check_same_dimension(original, thresholded)
    margin = min_eigenvalue(original, solver)
    ok = bool(operator_norm(thresholded - original, solver) < margin)
    if ok and not min_eigenvalue(thresholded, solver) > 0:
        raise NumericalFailure("Perturbation bound holds but the thresholded matrix has a "
                               "nonpositive eigenvalue.")
    return ok


def inverse_estimate(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> SymMatrix:
    """
    Inverse of a positive definite matrix through its Cholesky factor.
    :raises NotPositiveDefinite: if lambda_min(m) <= 1e-10.
    """
    lam = min_eigenvalue(m, solver)
    if lam <= INVERSE_MIN_EIGENVALUE:
        raise NotPositiveDefinite(f"Cannot invert: smallest eigenvalue {lam:.3e} is not above "
                                  f"{INVERSE_MIN_EIGENVALUE}.")
    chol_inv = np.linalg.solve(cholesky(m), np.eye(m.p))
    return SymMatrix(chol_inv.T @ chol_inv, symmetrize=True)
