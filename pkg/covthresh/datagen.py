"""
Ground-truth covariance models and seeded samplers.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Optional, Sequence, Tuple

import numpy as np

from covthresh.config import FromDictMixin
from covthresh.errors import InputError, NotPositiveDefinite, TooFewSamples
from covthresh.estimators import ObsMatrix
from covthresh.matcore import DEFAULT_SOLVER, SymMatrix, cholesky, min_eigenvalue
from covthresh.rng import Purpose, substream, validate_seed

logger = logging.getLogger(__name__)

AR1 = 'ar1'
POLYNOMIAL_DECAY = 'polynomial_decay'
DIAGONAL = 'diagonal'
MODEL_KINDS = (AR1, POLYNOMIAL_DECAY, DIAGONAL)

GAUSSIAN = 'gaussian'
SCALED_STUDENT_T = 'scaled_student_t'
NOISE_KINDS = (GAUSSIAN, SCALED_STUDENT_T)

ROWS_PER_TASK = 256


@dataclass(frozen=True)
class ModelSpec(FromDictMixin):
    """
    Population covariance model.

    ar1: entries rho^|i-j|. polynomial_decay: unit diagonal, eps |i-j|^-(alpha+1) off it.
    diagonal: diag(values), p taken from values when not given.
    """
    kind: str
    p: Optional[int] = None
    rho: Optional[float] = None
    alpha: Optional[float] = None
    eps: Optional[float] = None
    values: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InputError(f"Model kind: Expected one of {MODEL_KINDS}, got '{self.kind}'.")
        if self.kind == DIAGONAL:
            if not self.values:
                raise InputError("A diagonal model needs a nonempty 'values' list.")
            object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
            if self.p is None:
                object.__setattr__(self, 'p', len(self.values))
            elif self.p != len(self.values):
                raise InputError(f"Diagonal model: p={self.p} but {len(self.values)} values.")
        if self.p is None or self.p < 1:
            raise InputError(f"Dimension p must be a positive integer, got {self.p}.")
        if self.kind == AR1:
            if self.rho is None or not -1 < self.rho < 1:
                raise InputError(f"AR(1) model needs |rho| < 1, got rho={self.rho}.")
        if self.kind == POLYNOMIAL_DECAY:
            if self.alpha is None or not self.alpha > 0:
                raise InputError(f"Polynomial decay needs alpha > 0, got {self.alpha}.")
            if self.eps is None or not self.eps > 0:
                raise InputError(f"Polynomial decay needs eps > 0, got {self.eps}.")


@dataclass(frozen=True)
class SampleSpec(FromDictMixin):
    n: int
    seed: int
    noise: str = GAUSSIAN
    dof: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise TooFewSamples(f"Sample size must be at least 2, got n={self.n}.")
        validate_seed(self.seed)
        if self.noise not in NOISE_KINDS:
            raise InputError(f"Noise: Expected one of {NOISE_KINDS}, got '{self.noise}'.")
        if self.noise == SCALED_STUDENT_T:
            if self.dof is None or int(self.dof) != self.dof or self.dof <= 2:
                raise InputError(f"Student-t noise needs an integer dof > 2, got {self.dof}.")


def specs_from_config(config: dict) -> Tuple[ModelSpec, SampleSpec]:
    """
    Split a flat generator config {kind, p, rho | alpha, eps | values, n, seed, noise, dof} into
    its model and sampling parts.
    """
    model_keys = {f.name for f in fields(ModelSpec)}
    sample_keys = {f.name for f in fields(SampleSpec)}
    unknown = sorted(set(config) - model_keys - sample_keys)
    if unknown:
        raise InputError(f"Generator config: unknown key '{unknown[0]}'.")
    model = ModelSpec.from_dict({k: v for k, v in config.items() if k in model_keys})
    sample_spec = SampleSpec.from_dict({k: v for k, v in config.items() if k in sample_keys})
    return model, sample_spec


def _lags(p: int) -> np.ndarray:
    idx = np.arange(p)
    return np.abs(idx[:, None] - idx[None, :])


def build_covariance(spec: ModelSpec, solver: str = DEFAULT_SOLVER) -> SymMatrix:
    """
    :raises NotPositiveDefinite: if the model's matrix is not positive definite, e.g. a
        polynomial_decay model with eps too large.
    """
    if spec.kind == AR1:
        a = float(spec.rho) ** _lags(spec.p).astype(float)
    elif spec.kind == POLYNOMIAL_DECAY:
        lag = _lags(spec.p).astype(float)
        np.fill_diagonal(lag, 1.0)
        a = spec.eps * lag ** -(spec.alpha + 1.0)
        np.fill_diagonal(a, 1.0)
    else:
        a = np.diag(np.asarray(spec.values, dtype=float))
    sigma = SymMatrix(a)
    lam = min_eigenvalue(sigma, solver)
    if not lam > 0:
        raise NotPositiveDefinite(f"{spec.kind} model with p={spec.p} is not positive definite "
                                  f"(smallest eigenvalue {lam:.3e}).")
    return sigma


def _innovations(gen: np.random.Generator, p: int, spec: SampleSpec) -> np.ndarray:
    if spec.noise == GAUSSIAN:
        return gen.standard_normal(p)
    return gen.standard_t(spec.dof, p) * math.sqrt((spec.dof - 2) / spec.dof)


def sample(sigma: SymMatrix, spec: SampleSpec, threads: int = 1,
           columns: Optional[Sequence[str]] = None) -> ObsMatrix:
    """
    n mean-zero rows X_k = L Z_k with L the Cholesky factor of sigma. Z_k is drawn from the
    substream of row k, so the output is the same for any thread count.
    """
    chol = cholesky(sigma)
    p = sigma.p

    def draw(start: int) -> np.ndarray:
        stop = min(start + ROWS_PER_TASK, spec.n)
        z = np.stack([_innovations(substream(spec.seed, Purpose.ROWS, k), p, spec)
                      for k in range(start, stop)])
        return z @ chol.T

    starts = range(0, spec.n, ROWS_PER_TASK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(draw, starts))
    else:
        blocks = [draw(s) for s in starts]
    return ObsMatrix(np.vstack(blocks), columns=columns)


def permute_variables(x: ObsMatrix, seed: int) -> Tuple[ObsMatrix, np.ndarray]:
    """
    Reorder the columns of x by a seeded uniformly random permutation.
    :return: (permuted data, perm) with column i of the result being column perm[i] of x.
    """
    perm = substream(seed, Purpose.PERMUTATION).permutation(x.p)
    return x.take_columns(perm), perm


def inverse_permutation(perm: Sequence[int]) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


@dataclass(frozen=True)
class SpatialField:
    """
    Synthetic gridded field: n_years observations of grid_rows x grid_cols locations flattened row
    by row, the true covariance, and the block (0 or 1) each location belongs to.
    """
    data: ObsMatrix
    truth: SymMatrix
    grid_shape: Tuple[int, int]
    blocks: np.ndarray

    def block_sizes(self) -> Tuple[int, int]:
        return int(np.sum(self.blocks == 0)), int(np.sum(self.blocks == 1))


def synthetic_spatial_field(grid_rows: int, grid_cols: int, length_scale: float, n_years: int,
                            missing_rate: float, seed: int,
                            split_fraction: float = 0.6) -> SpatialField:
    """
    Two clusters of grid columns, the first round(split_fraction * grid_cols) columns and the
    rest. Within a cluster the covariance is exp(-d / length_scale) in Euclidean grid distance;
    across clusters it is zero. Entries are then hidden independently with probability
    missing_rate.
    """
    if grid_rows < 1 or grid_cols < 2:
        raise InputError(f"Grid must have at least 1 row and 2 columns, got "
                         f"{grid_rows} x {grid_cols}.")
    if not length_scale > 0:
        raise InputError(f"length_scale must be positive, got {length_scale}.")
    if not 0 <= missing_rate < 0.5:
        raise InputError(f"missing_rate must lie in [0, 0.5), got {missing_rate}.")
    if not 0 < split_fraction < 1:
        raise InputError(f"split_fraction must lie in (0, 1), got {split_fraction}.")
    cut = min(max(int(math.floor(split_fraction * grid_cols + 0.5)), 1), grid_cols - 1)

    rows, cols = np.divmod(np.arange(grid_rows * grid_cols), grid_cols)
    blocks = (cols >= cut).astype(int)
    dist = np.hypot(rows[:, None] - rows[None, :], cols[:, None] - cols[None, :])
    same_block = blocks[:, None] == blocks[None, :]
    truth = SymMatrix(np.where(same_block, np.exp(-dist / length_scale), 0.0))

    names = [f'r{r}c{c}' for r, c in zip(rows, cols)]
    x = sample(truth, SampleSpec(n=n_years, seed=seed), columns=names)
    if missing_rate > 0:
        hidden = substream(seed, Purpose.MASK).random((x.n, x.p)) < missing_rate
        values = x.values
        values[hidden] = np.nan
        x = ObsMatrix(values, columns=names)
    logger.debug("Spatial field %dx%d, blocks of %d and %d locations, %d hidden entries",
                 grid_rows, grid_cols, int(np.sum(blocks == 0)), int(np.sum(blocks == 1)),
                 int(x.missing_mask.sum()))
    blocks.setflags(write=False)
    return SpatialField(data=x, truth=truth, grid_shape=(grid_rows, grid_cols), blocks=blocks)
