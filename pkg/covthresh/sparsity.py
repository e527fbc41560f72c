"""
Diagnostics for the permutation-invariant sparsity classes and the polynomial-decay class, and the
convergence-rate expressions used to check estimators empirically.

All logarithms are natural. Rate functions return the bare rate expression for the caller's c0;
they make no claim about the unspecified constants in front.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from covthresh.errors import InputError, InvalidQ, NumericalFailure
from covthresh.matcore import DEFAULT_SOLVER, SymMatrix, sym_eigen

BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class SparsityProfile:
    q: float
    c0_hat: float
    m_hat: float
    min_eig: float
    lambda_max_bound: float


@dataclass(frozen=True)
class DecayClassParams:
    alpha: float
    big_c: float
    eps0: float

    def __post_init__(self):
        for name in ('alpha', 'big_c', 'eps0'):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}.")


@dataclass(frozen=True)
class DecayViolation:
    """
    First failed condition of a decay-class check. kind is 'entry', 'lambda_min' or 'lambda_max';
    i and j are only set for 'entry'.
    """
    kind: str
    value: float
    bound: float
    i: Optional[int] = None
    j: Optional[int] = None


@dataclass(frozen=True)
class DecayCheck:
    ok: bool
    violation: Optional[DecayViolation] = None

    def __bool__(self):
        return self.ok


def _check_q(q: float) -> None:
    if not 0 <= q < 1:
        raise InvalidQ(f"q must lie in [0, 1), got {q}.")


def sparsity_radius(m: SymMatrix, q: float) -> float:
    """
    max_i sum_j |m_ij|^q. Zero entries contribute nothing, also for q = 0, where the radius is the
    largest number of nonzeros in a row.
    """
    _check_q(q)
    a = np.abs(m.values)
    powered = np.zeros_like(a)
    nonzero = a != 0
    powered[nonzero] = a[nonzero] ** q
    return float(powered.sum(axis=1).max())


def profile(m: SymMatrix, q: float, solver: str = DEFAULT_SOLVER) -> SparsityProfile:
    """
    Empirical class parameters of m: radius c0, largest diagonal M, smallest eigenvalue, and the
    implied bound M^(1-q) c0 on lambda_max.
    """
    c0_hat = sparsity_radius(m, q)
    m_hat = float(np.max(np.diag(m.values)))
    values = sym_eigen(m, solver).values
    bound = max(m_hat, 0.0) ** (1.0 - q) * c0_hat
    # The chain lambda_max <= ||m||_(1,1) <= M^(1-q) c0 needs every |m_ij| <= M.
    if np.abs(m.values).max() <= m_hat and values[0] > bound + BOUND_SLACK:
        raise NumericalFailure(f"lambda_max {values[0]:.12g} exceeds its bound {bound:.12g}.")
    return SparsityProfile(q=q, c0_hat=c0_hat, m_hat=m_hat, min_eig=float(values[-1]),
                           lambda_max_bound=bound)


def decay_class_check(m: SymMatrix, params: DecayClassParams,
                      solver: str = DEFAULT_SOLVER) -> DecayCheck:
    """
    Membership test for the class of matrices with |m_ij| <= C |i-j|^-(alpha+1) off the diagonal
    and spectrum inside [eps0, 1/eps0]. Entries are scanned row-major over i < j.
    """
    a = m.values
    idx = np.arange(m.p)
    lag = np.abs(idx[:, None] - idx[None, :]).astype(float)
    with np.errstate(divide='ignore'):
        limit = params.big_c * lag ** -(params.alpha + 1.0)
    bad = np.argwhere(np.triu(np.abs(a) > limit, k=1))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        return DecayCheck(False, DecayViolation('entry', float(a[i, j]), float(limit[i, j]), i, j))

    values = sym_eigen(m, solver).values
    if values[-1] < params.eps0:
        return DecayCheck(False, DecayViolation('lambda_min', float(values[-1]), params.eps0))
    if values[0] > 1.0 / params.eps0:
        return DecayCheck(False, DecayViolation('lambda_max', float(values[0]), 1.0 / params.eps0))
    return DecayCheck(True)


def decay_class_radius_bound(params: DecayClassParams, q: float) -> float:
    """
    Upper bound eps0^-q + 2 C^q (alpha+1) q / ((alpha+1) q - 1) on the sparsity radius of
    decay-class members, for q > 1/(alpha+1). The first term bounds the diagonal entry, the second
    the off-diagonal tail of a row.
    """
    _check_q(q)
    a1q = (params.alpha + 1.0) * q
    if a1q <= 1:
        raise InvalidQ(f"q must exceed 1/(alpha+1) = {1.0 / (params.alpha + 1.0):.6g}, got {q}.")
    return params.eps0 ** -q + 2.0 * params.big_c ** q * a1q / (a1q - 1.0)


def _log_ratio(p: int, n: int) -> float:
    if p < 2 or n < 1:
        raise InputError(f"Rates need p >= 2 and n >= 1, got p={p}, n={n}.")
    return math.log(p) / n


def operator_rate(q: float, c0: float, p: int, n: int) -> float:
    """
    c0 (ln p / n)^((1-q)/2): operator-norm rate of thresholding.
    """
    return c0 * _log_ratio(p, n) ** ((1.0 - q) / 2.0)


def frobenius_rate(q: float, c0: float, p: int, n: int) -> float:
    """
    c0 (ln p / n)^(1-q/2): rate of the per-coordinate squared Frobenius loss
    (1/p)||T(S) - Sigma||_F^2.
    """
    return c0 * _log_ratio(p, n) ** (1.0 - q / 2.0)


def heavy_tail_rate(q: float, c0: float, p: int, n: int, gamma: float) -> float:
    """
    c0 (p^(2/(1+gamma)) / sqrt(n))^(1-q): operator-norm rate under 2(1+gamma) finite moments.
    """
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}.")
    if p < 1 or n < 1:
        raise InputError(f"p and n must be positive, got p={p}, n={n}.")
    return c0 * (p ** (2.0 / (1.0 + gamma)) / math.sqrt(n)) ** (1.0 - q)


def band_rate(alpha: float, p: int, n: int) -> float:
    """
    (ln p / n)^(alpha / (2(alpha+1))): operator-norm rate of banding over the decay class, for
    comparison with operator_rate at q > 1/(alpha+1).
    """
    if not alpha > 0:
        raise InputError(f"alpha must be positive, got {alpha}.")
    return _log_ratio(p, n) ** (alpha / (2.0 * (alpha + 1.0)))
