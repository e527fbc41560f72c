"""
Choice of the threshold (or band width) by repeated random sample splitting.

For each of N splits the rows are permuted, the first n1 rows give S1 and the remaining n2 rows
give S2, and the risk of a tuning value s is the Frobenius distance between the regularized S1 and
the unregularized S2, averaged over splits. The chosen value minimizes that risk over a grid;
ties go to the largest value, i.e. the sparsest estimate.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from covthresh.errors import DimensionTooSmall, InputError, TooFewSamples
from covthresh.estimators import (ObsMatrix, band, complete_values, pairwise_covariance,
                                  ThresholdSpec, sample_covariance, threshold)
from covthresh.matcore import SymMatrix, check_same_dimension
from covthresh.rng import Purpose, substream, validate_seed

logger = logging.getLogger(__name__)

THRESHOLD = 'threshold'
BANDWIDTH = 'bandwidth'
GRID_KINDS = (THRESHOLD, BANDWIDTH)
OFF_DIAGONAL_THRESHOLD = 'threshold_offdiag'
REGULARIZERS_FOR_KIND = {THRESHOLD: ('threshold', OFF_DIAGONAL_THRESHOLD), BANDWIDTH: ('band',)}
COVARIANCES = {'sample': sample_covariance, 'pairwise': pairwise_covariance}

DEFAULT_N_SPLITS = 10
J_MAX_CAP = 200


@dataclass(frozen=True)
class SplitScheme:
    """
    Sizes of the two halves of every split, number of splits N, and the seed of the row shuffles.
    """
    n1: int
    n2: int
    n_splits: int = DEFAULT_N_SPLITS
    seed: int = 0

    def __post_init__(self):
        if self.n1 < 2:
            raise TooFewSamples(f"First half of a split needs at least 2 rows, got n1={self.n1}.")
        if self.n2 < 1:
            raise TooFewSamples(f"Second half of a split needs at least 1 row, got n2={self.n2}.")
        if self.n_splits < 1:
            raise InputError(f"Number of splits must be positive, got {self.n_splits}.")
        validate_seed(self.seed)

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @classmethod
    def default(cls, n: int, seed: int, n_splits: int = DEFAULT_N_SPLITS) -> 'SplitScheme':
        """
        n2 = round(n / ln n) (halves rounded up), at least 1; n1 = n - n2.
        """
        if n < 3:
            raise TooFewSamples(f"Sample splitting needs at least 3 observations, got {n}.")
        n2 = max(1, int(math.floor(n / math.log(n) + 0.5)))
        return cls(n1=n - n2, n2=n2, n_splits=n_splits, seed=seed)

    def swapped(self) -> 'SplitScheme':
        """
        The scheme with the sizes of the two halves exchanged, so the regularized half is the
        smaller one.
        """
        return SplitScheme(n1=self.n2, n2=self.n1, n_splits=self.n_splits, seed=self.seed)


@dataclass(frozen=True)
class TuningGrid:
    points: Tuple[float, ...]
    kind: str = THRESHOLD

    def __post_init__(self):
        if self.kind not in GRID_KINDS:
            raise InputError(f"Grid kind: Expected one of {GRID_KINDS}, got '{self.kind}'.")
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            raise InputError("Tuning grid is empty.")
        if np.any(pts < 0) or np.any(np.diff(pts) <= 0):
            raise InputError("Tuning grid must be nonnegative and strictly increasing.")
        if self.kind == THRESHOLD and pts[0] != 0:
            raise InputError(f"A threshold grid starts at 0, got {pts[0]}.")
        if self.kind == BANDWIDTH and np.any(pts != np.round(pts)):
            raise InputError("Band widths must be integers.")
        object.__setattr__(self, 'points', tuple(float(v) for v in pts))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class SelectionResult:
    kind: str
    chosen: float
    risk_curve: Tuple[Tuple[float, float], ...]
    scheme: Optional[SplitScheme] = None

    @property
    def grid(self) -> List[float]:
        return [pt for pt, _ in self.risk_curve]

    @property
    def risk(self) -> List[float]:
        return [r for _, r in self.risk_curve]

    def to_dict(self) -> dict:
        scheme = self.scheme
        return {'kind': self.kind,
                'chosen': self.chosen,
                'grid': self.grid,
                'risk': self.risk,
                'n1': scheme.n1 if scheme else None,
                'n2': scheme.n2 if scheme else None,
                'n_splits': scheme.n_splits if scheme else None,
                'seed': scheme.seed if scheme else None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> 'SelectionResult':
        scheme = None
        if d.get('n1') is not None:
            scheme = SplitScheme(n1=d['n1'], n2=d['n2'], n_splits=d['n_splits'], seed=d['seed'])
        return cls(kind=d['kind'], chosen=float(d['chosen']),
                   risk_curve=tuple(zip(map(float, d['grid']), map(float, d['risk']))),
                   scheme=scheme)


def threshold_step(p: int, n: int, subdivisions: int = 1) -> float:
    return math.sqrt(math.log(p) / n) / subdivisions


def make_grid(p: int, n: int, j_max: int, kind: str = THRESHOLD,
              subdivisions: int = 1) -> TuningGrid:
    """
    Threshold grid {j sqrt(ln p / n) / subdivisions : 0 <= j <= j_max}, or band widths
    {0, 1, ..., min(j_max, p - 1)}.
    :param subdivisions: Refines the threshold step; 1 gives the plain sqrt(ln p / n) spacing.
    """
    if p < 2:
        raise DimensionTooSmall(f"A tuning grid needs p >= 2, got p={p}.")
    if j_max < 0:
        raise InputError(f"j_max must be nonnegative, got {j_max}.")
    if subdivisions < 1:
        raise InputError(f"subdivisions must be a positive integer, got {subdivisions}.")
    if kind == THRESHOLD:
        step = threshold_step(p, n, subdivisions)
        return TuningGrid(tuple(j * step for j in range(j_max + 1)), THRESHOLD)
    if kind == BANDWIDTH:
        return TuningGrid(tuple(float(k) for k in range(min(j_max, p - 1) + 1)), BANDWIDTH)
    raise InputError(f"Grid kind: Expected one of {GRID_KINDS}, got '{kind}'.")


def default_j_max(sigma_hat: SymMatrix, n: int, kind: str = THRESHOLD,
                  subdivisions: int = 1) -> int:
    """
    Smallest j whose threshold reaches max |sigma_hat_ij| (beyond it the risk is constant), capped
    at 200 steps of the unrefined grid. For band widths, p - 1.
    """
    if kind == BANDWIDTH:
        return sigma_hat.p - 1
    step = threshold_step(sigma_hat.p, n, subdivisions)
    top = float(np.abs(sigma_hat.values).max())
    cap = J_MAX_CAP * subdivisions
    j = int(math.ceil(top / step))
    while j * step < top and j < cap:
        j += 1
    return min(j, cap)


def auto_grid(sigma_hat: SymMatrix, n: int, kind: str = THRESHOLD,
              subdivisions: int = 1) -> TuningGrid:
    j_max = default_j_max(sigma_hat, n, kind, subdivisions)
    return make_grid(sigma_hat.p, n, j_max, kind, subdivisions)


def regularize(m: SymMatrix, point: float, regularizer: str) -> SymMatrix:
    """
    :param regularizer: 'threshold', 'threshold_offdiag' (thresholds off-diagonal entries only) or
        'band'.
    """
    if regularizer == 'threshold':
        return threshold(m, point)
    if regularizer == OFF_DIAGONAL_THRESHOLD:
        return threshold(m, ThresholdSpec(point, keep_diagonal=True))
    if regularizer == 'band':
        return band(m, int(point))
    raise InputError(f"regularizer: Expected 'threshold', '{OFF_DIAGONAL_THRESHOLD}' or 'band', "
                     f"got '{regularizer}'.")


def _resolve_regularizer(grid: TuningGrid, regularizer: Optional[str]) -> str:
    allowed = REGULARIZERS_FOR_KIND[grid.kind]
    if regularizer is None:
        return allowed[0]
    if regularizer not in allowed:
        raise InputError(f"Regularizer '{regularizer}' does not match a {grid.kind} grid.")
    return regularizer


def _losses(estimate: SymMatrix, target: SymMatrix, grid: TuningGrid,
            regularizer: str) -> np.ndarray:
    b = target.values
    return np.array([np.sum((regularize(estimate, pt, regularizer).values - b) ** 2)
                     for pt in grid.points])


def _pick(points: Sequence[float], risks: np.ndarray,
          min_point: Optional[float] = None) -> float:
    """
    Grid point of minimal risk, the largest one among ties.
    """
    eligible = np.ones(len(points), dtype=bool)
    if min_point is not None:
        eligible = np.asarray(points) >= min_point
        if not eligible.any():
            raise InputError(f"No grid point at or above the cutoff {min_point}.")
    best = risks[eligible].min()
    idx = np.flatnonzero(eligible & (risks == best))[-1]
    return float(points[idx])


def split_rows(scheme: SplitScheme, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row indices of the two halves of split number index.
    """
    perm = substream(scheme.seed, Purpose.SPLITS, index).permutation(scheme.n)
    return perm[:scheme.n1], perm[scheme.n1:]


def cv_risk(x: ObsMatrix, grid: TuningGrid, scheme: SplitScheme,
            regularizer: Optional[str] = None, covariance: str = 'sample',
            threads: int = 1) -> List[Tuple[float, float]]:
    """
    Average over splits of ||regularize(S1, point) - S2||_F^2 for every grid point.
    :param covariance: 'sample' for complete data, 'pairwise' to allow missing entries.
    :param threads: Splits run concurrently on this many threads; the result does not depend on it.
    :return: List of (grid point, risk).
    """
    regularizer = _resolve_regularizer(grid, regularizer)
    if covariance not in COVARIANCES:
        raise InputError(f"covariance: Expected one of {list(COVARIANCES)}, got '{covariance}'.")
    if scheme.n != x.n:
        raise InputError(f"Split sizes {scheme.n1} + {scheme.n2} do not add up to n={x.n}.")
    if scheme.n1 < 2 or scheme.n2 < 2:
        raise TooFewSamples(f"Each half of a split needs at least 2 rows, got n1={scheme.n1}, "
                            f"n2={scheme.n2}.")
    if covariance == 'sample':
        complete_values(x)
    estimate: Callable[[ObsMatrix], SymMatrix] = COVARIANCES[covariance]

    def split_losses(index: int) -> np.ndarray:
        first, second = split_rows(scheme, index)
        return _losses(estimate(x.take_rows(first)), estimate(x.take_rows(second)), grid,
                       regularizer)

    indices = range(scheme.n_splits)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_split = list(pool.map(split_losses, indices))
    else:
        per_split = [split_losses(i) for i in indices]

    total = np.zeros(len(grid))
    for losses in per_split:
        total += losses
    risks = total / scheme.n_splits
    return list(zip(grid.points, (float(r) for r in risks)))


def select(x: ObsMatrix, grid: TuningGrid, scheme: SplitScheme,
           regularizer: Optional[str] = None, covariance: str = 'sample',
           min_threshold: Optional[float] = None, threads: int = 1) -> SelectionResult:
    """
    Tuning value minimizing the cross-validated risk.
    :param min_threshold: Optional lower cutoff; grid points below it are not eligible.
    """
    curve = cv_risk(x, grid, scheme, regularizer, covariance, threads)
    chosen = _pick(grid.points, np.array([r for _, r in curve]), min_threshold)
    logger.debug("Selected %s %.6g over %d grid points (n1=%d, n2=%d, N=%d)", grid.kind, chosen,
                 len(grid), scheme.n1, scheme.n2, scheme.n_splits)
    return SelectionResult(kind=grid.kind, chosen=chosen, risk_curve=tuple(curve), scheme=scheme)


def oracle_select(sigma_hat: SymMatrix, sigma_true: SymMatrix, grid: TuningGrid,
                  regularizer: Optional[str] = None) -> SelectionResult:
    """
    Tuning value minimizing the true loss ||regularize(sigma_hat, point) - sigma_true||_F^2.
    """
    check_same_dimension(sigma_hat, sigma_true)
    regularizer = _resolve_regularizer(grid, regularizer)
    risks = _losses(sigma_hat, sigma_true, grid, regularizer)
    chosen = _pick(grid.points, risks)
    return SelectionResult(kind=grid.kind, chosen=chosen,
                           risk_curve=tuple(zip(grid.points, (float(r) for r in risks))))


def default_scheme(n: int, n_splits: int = DEFAULT_N_SPLITS, seed: int = 0) -> SplitScheme:
    return SplitScheme.default(n, seed=seed, n_splits=n_splits)
