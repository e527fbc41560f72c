"""
Dense symmetric matrices: norms, eigendecomposition, Cholesky factor and definiteness tests.
"""
import functools
import logging
from dataclasses import dataclass
from typing import Iterable, TextIO, Tuple

import numpy as np

from covthresh.errors import (DimensionMismatch, EigenNotConverged, InputError,
                              NotPositiveDefinite)

logger = logging.getLogger(__name__)

JACOBI = 'jacobi'
LAPACK = 'lapack'
SOLVERS = (JACOBI, LAPACK)
DEFAULT_SOLVER = JACOBI

MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
CSV_FLOAT_FORMAT = '%.17g'


class SymMatrix:
    """
    Immutable dense p x p real symmetric matrix with finite entries.

    Symmetry is enforced bit-exactly at construction. Pass symmetrize=True to accept a matrix that
    is only numerically symmetric; it is then replaced by (a + a.T) / 2, which is exactly symmetric.
    """

    def __init__(self, values, *, symmetrize: bool = False):
        a = np.array(values, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InputError(f"Expected a nonempty square matrix, got shape {a.shape}.")
        if not np.all(np.isfinite(a)):
            i, j = np.argwhere(~np.isfinite(a))[0]
            raise InputError(f"Non-finite entry {a[i, j]} at ({i}, {j}).")
        if symmetrize:
            a = (a + a.T) / 2
        elif not np.array_equal(a, a.T):
            i, j = np.argwhere(a != a.T)[0]
            raise InputError(f"Matrix is not symmetric: entry ({i}, {j}) is {a[i, j]!r} "
                             f"but ({j}, {i}) is {a[j, i]!r}.")
        a.setflags(write=False)
        self._values = a

    @classmethod
    def from_array(cls, values, symmetrize: bool = False) -> 'SymMatrix':
        return cls(values, symmetrize=symmetrize)

    @classmethod
    def identity(cls, p: int) -> 'SymMatrix':
        return cls(np.eye(p))

    @classmethod
    def diag(cls, values: Iterable[float]) -> 'SymMatrix':
        return cls(np.diag(np.asarray(list(values), dtype=float)))

    @property
    def p(self) -> int:
        return self._values.shape[0]

    @property
    def values(self) -> np.ndarray:
        """
        Read-only view of the entries.
        """
        return self._values

    def diagonal(self) -> np.ndarray:
        return np.diag(self._values).copy()

    def permute(self, perm) -> 'SymMatrix':
        """
        Returns P M P^T for the permutation that sends variable perm[i] to position i, i.e. the
        covariance of data whose columns were reordered as x[:, perm].
        """
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.p)):
            raise InputError(f"Not a permutation of 0..{self.p - 1}: {perm.tolist()}.")
        return SymMatrix(self._values[np.ix_(perm, perm)])

    def to_csv(self, stream: TextIO) -> None:
        """
        Write all p rows of the full matrix, comma separated, with round-trip precision.
        """
        np.savetxt(stream, self._values, fmt=CSV_FLOAT_FORMAT, delimiter=',')

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __add__(self, other: 'SymMatrix') -> 'SymMatrix':
        check_same_dimension(self, other)
        return SymMatrix(self._values + other.values)

    def __sub__(self, other: 'SymMatrix') -> 'SymMatrix':
        check_same_dimension(self, other)
        return SymMatrix(self._values - other.values)

    def __neg__(self) -> 'SymMatrix':
        return SymMatrix(-self._values)

    def __mul__(self, scalar: float) -> 'SymMatrix':
        return SymMatrix(self._values * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SymMatrix):
            return NotImplemented
        return np.array_equal(self._values, other.values)

    def __repr__(self):
        return f"{self.__class__.__name__}, p={self.p}, frobenius norm {frobenius_norm(self):.6g}."


@dataclass(frozen=True)
class EigenDecomp:
    """
    Eigenvalues sorted descending; column j of vectors belongs to values[j].
    """
    values: np.ndarray
    vectors: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.values[0])

    @property
    def lambda_min(self) -> float:
        return float(self.values[-1])

    def reconstruct(self) -> SymMatrix:
        return SymMatrix((self.vectors * self.values) @ self.vectors.T, symmetrize=True)


def one_norm(m: SymMatrix) -> float:
    """
    Maximum absolute column sum. For symmetric m this is both the (1,1) and the (inf,inf) norm and
    bounds the operator norm from above.
    """
    return float(np.abs(m.values).sum(axis=0).max())


def frobenius_norm(m: SymMatrix) -> float:
    return float(np.sqrt(np.sum(m.values ** 2)))


def sym_eigen(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> EigenDecomp:
    """
    Eigendecomposition of a symmetric matrix.

    Eigenvalues are sorted descending. Each eigenvector is signed so that its largest-magnitude
    component is positive, the lowest index winning ties, which makes the output deterministic.
    :param m: Matrix to decompose.
    :param solver: 'jacobi' (cyclic Jacobi rotations, the default) or 'lapack' (numpy.linalg.eigh).
    """
    if solver == JACOBI:
        values, vectors = _jacobi_eigh(m.values)
    elif solver == LAPACK:
        try:
            values, vectors = np.linalg.eigh(m.values)
        except np.linalg.LinAlgError as e:
            raise EigenNotConverged(f"LAPACK eigensolver failed on {m!r}") from e
    else:
        raise InputError(f"solver: Expected one of {SOLVERS}, got '{solver}'.")

    order = np.argsort(-values, kind='stable')
    values = values[order]
    vectors = vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(m.p)])
    signs[signs == 0] = 1.0
    vectors = vectors * signs
    values.setflags(write=False)
    vectors.setflags(write=False)
    return EigenDecomp(values=values, vectors=vectors)


def eigenvalues(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> np.ndarray:
    return sym_eigen(m, solver).values


def operator_norm(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> float:
    return float(np.max(np.abs(eigenvalues(m, solver))))


def min_eigenvalue(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> float:
    return float(eigenvalues(m, solver)[-1])


def max_eigenvalue(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> float:
    return float(eigenvalues(m, solver)[0])


def is_positive_definite(m: SymMatrix, solver: str = DEFAULT_SOLVER) -> bool:
    return min_eigenvalue(m, solver) > 0


def cholesky(m: SymMatrix) -> np.ndarray:
    """
    Lower-triangular L with L L^T = m.
    :raises NotPositiveDefinite: if a pivot is not strictly positive.
    """
    try:
        return np.linalg.cholesky(m.values)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {m!r} is not positive "
                                  f"definite.") from e


def check_same_dimension(*matrices: SymMatrix) -> None:
    dims = {m.p for m in matrices}
    if len(dims) > 1:
        raise DimensionMismatch(f"Matrices have different dimensions: {sorted(dims)}.")


@functools.lru_cache(maxsize=64)
def _round_robin(p: int) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    """
    Tournament schedule covering every index pair once per sweep, in rounds of disjoint pairs.
    An odd p gets a dummy index whose pairs are dropped.
    """
    m = p + p % 2
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = sorted((min(a, b), max(a, b)) for a, b in
                       ((players[k], players[m - 1 - k]) for k in range(m // 2))
                       if a < p and b < p)
        rows = np.array([a for a, _ in pairs], dtype=int)
        cols = np.array([b for _, b in pairs], dtype=int)
        rounds.append((rows, cols))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_diagonal_mass(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _jacobi_eigh(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi in round-robin order. Each round applies p/2 disjoint rotations at once; a sweep
    visits every off-diagonal pair once.
    """
    a = np.array(m, dtype=float)
    p = a.shape[0]
    v = np.eye(p)
    tol = JACOBI_TOL * float(np.linalg.norm(a))
    rounds = _round_robin(p)

    for sweep in range(MAX_SWEEPS + 1):
        off = _off_diagonal_mass(a)
        if off <= tol:
            logger.debug("Jacobi converged after %d sweeps, p=%d", sweep, p)
            return np.diag(a).copy(), v
        if sweep == MAX_SWEEPS:
            break
        for rows, cols in rounds:
            apq = a[rows, cols]
            active = apq != 0.0
            if not active.any():
                continue
            i, j, apq = rows[active], cols[active], apq[active]
            theta = (a[j, j] - a[i, i]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            ai, aj = a[i, :], a[j, :]
            a[i, :] = c[:, None] * ai - s[:, None] * aj
            a[j, :] = s[:, None] * ai + c[:, None] * aj
            ai, aj = a[:, i], a[:, j]
            a[:, i] = ai * c - aj * s
            a[:, j] = ai * s + aj * c
            a[i, j] = 0.0
            a[j, i] = 0.0
            vi, vj = v[:, i], v[:, j]
            v[:, i] = vi * c - vj * s
            v[:, j] = vi * s + vj * c

    raise EigenNotConverged(f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps "
                            f"(off-diagonal mass {off:.3e}, tolerance {tol:.3e}).")
