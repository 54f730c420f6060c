"""Gamma, Mittag-Leffler (scalar and matrix), alpha-exponential and memory kernels.

All matrix functions here are power series in ``A t**alpha``,

    E_{a,b}(A t^a) = sum_k A^k t^(k a) / Gamma(k a + b),

summed directly. The series is adequate while ``||A|| t**alpha`` stays moderate;
how far depends on alpha (the largest term grows like ``exp(z**(1/alpha))``).
Cancellation costing more than 8 digits emits a
:class:`~fracmem.errors.PrecisionWarning`; more than 11 raises
:class:`~fracmem.errors.ConvergenceError`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy import special

from .errors import ConvergenceError, DomainError, OrderError, PrecisionWarning

__all__ = [
    "Order",
    "gamma",
    "rgamma",
    "ml_scalar",
    "ml_matrix",
    "alpha_exp",
    "phi_beta",
    "series_length",
    "matrix_powers",
    "sum_matrix_series",
]

TERM_CAP = 10_000
SCALAR_TOL = 1e-14
MATRIX_TOL = 1e-13
EPS = np.finfo(float).eps
# relative loss (eps * sum|terms| / |sum|) above which results are flagged
CANCELLATION_WARN = 1e-8
CANCELLATION_FAIL = 1e-5


@dataclass(frozen=True)
class Order:
    """Fractional orders of a system (``alpha``) and of its observed memory (``beta``)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise OrderError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta >= 0.0:
            raise OrderError(f"beta must be >= 0, got {self.beta}")

    @property
    def memory_admissible(self) -> bool:
        """True when beta >= 1 - alpha, the range where memory is defined."""
        return self.beta >= 1.0 - self.alpha - 1e-14

    @property
    def kernel_exponent(self) -> float:
        """alpha + beta, the power (plus one) of the memory kernel at the origin."""
        return self.alpha + self.beta


def gamma(x: float) -> float:
    """Gamma function for real ``x > 0``.

    Raises DomainError for ``x <= 0`` and OverflowError when the value is not
    representable (``x`` above ~171.62).
    """
    x = float(x)
    if not x > 0.0:
        raise DomainError(f"gamma is only provided for x > 0, got {x}")
    return math.gamma(x)


def rgamma(x):
    """1/Gamma(x), exactly zero at the poles 0, -1, -2, ...; vectorized."""
    return special.rgamma(x)


def _neumaier_add(s, c, term):
    t = s + term
    big = np.abs(s) >= np.abs(term)
    c = c + np.where(big, (s - t) + term, (term - t) + s)
    return t, c


def ml_scalar(alpha: float, beta: float, z: float, tol: float = SCALAR_TOL) -> float:
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(z) for real z.

    The series is summed in double precision with compensated summation.
    When the sum of term magnitudes exceeds the result by so much that
    roundoff would spoil ``tol`` (or a term overflows for ``z < 0``), the
    same series is re-summed in extended precision. Raises ConvergenceError
    when more than ``TERM_CAP`` terms are needed and OverflowError if the
    value is outside the double range.
    """
    if not (alpha > 0 and beta > 0):
        raise DomainError("ml_scalar needs alpha > 0 and beta > 0")
    z = float(z)
    if z == 0.0:
        return float(rgamma(beta))
    logz = math.log(abs(z))
    neg = z < 0
    s = c = 0.0
    abs_sum = 0.0
    prev = math.inf
    for k in range(TERM_CAP):
        logt = k * logz - special.gammaln(k * alpha + beta)
        if logt > 709.0:
            if neg:
                return _ml_scalar_mp(alpha, beta, z, tol)
            raise OverflowError(f"E_({alpha},{beta})({z}) term {k} overflows")
        term = math.exp(logt)
        if neg and k % 2:
            term = -term
        s, c = _neumaier_add(s, c, term)
        abs_sum += abs(term)
        if not math.isfinite(abs_sum):
            if neg:
                return _ml_scalar_mp(alpha, beta, z, tol)
            raise OverflowError(f"E_({alpha},{beta})({z}) is not representable")
        total = s + c
        nxt = math.exp(min((k + 1) * logz - special.gammaln((k + 1) * alpha + beta), 709.0))
        if nxt < abs(term) <= prev and nxt < tol * (1.0 + abs(total)):
            break
        prev = abs(term)
    else:
        raise ConvergenceError(f"E_({alpha},{beta})({z}) did not converge in {TERM_CAP} terms")
    total = float(s + c)
    if not math.isfinite(total):
        raise OverflowError(f"E_({alpha},{beta})({z}) is not representable")
    if abs_sum * EPS > 0.1 * tol * abs(total):
        total = _ml_scalar_mp(alpha, beta, z, tol)
    return total


def _ml_scalar_mp(alpha, beta, z, tol):
    """Extended-precision series; working digits cover the largest term."""
    k = np.arange(TERM_CAP + 1)
    logt = k * math.log(abs(z)) - special.gammaln(k * alpha + beta)
    peak = int(np.argmax(logt))
    # past the peak the terms decrease; find where they drop below tol * eps
    small = np.nonzero((k > peak) & (logt < math.log(tol * EPS) - 1.0))[0]
    if small.size == 0:
        raise ConvergenceError(
            f"E_({alpha},{beta})({z}) needs more than {TERM_CAP} terms")
    nterms = int(small[0]) + 1
    top = logt[peak] / math.log(10.0)
    dps = int(25 + max(top, 0.0) - math.log10(tol))
    for _ in range(12):
        with mpmath.workdps(dps):
            za, al, be = mpmath.mpf(z), mpmath.mpf(alpha), mpmath.mpf(beta)
            acc = mpmath.mpf(0)
            zk = mpmath.mpf(1)
            for j in range(nterms):
                acc += zk * mpmath.rgamma(j * al + be)
                zk *= za
            if acc == 0:
                return 0.0
            # digits needed: cancellation (peak / result) plus the tolerance
            need = int(25 + top - float(mpmath.log10(abs(acc))) - math.log10(tol))
            if need <= dps:
                val = float(acc)
                if not math.isfinite(val):
                    raise OverflowError(f"E_({alpha},{beta})({z}) is not representable")
                return val
            dps = need + 10
    raise ConvergenceError(f"E_({alpha},{beta})({z}) extended sum did not settle")


def series_length(alpha: float, beta: float, z: float, tol: float = MATRIX_TOL) -> int:
    """Number of terms K so that sum_{k>=K} z^k/Gamma(k alpha + beta) is below
    ``tol * max(1, partial sum)`` for a scalar bound ``z >= 0``.

    Past the peak term the ratio of successive terms decreases monotonically,
    so ``term_K / (1 - ratio_K)`` bounds the tail.
    """
    if z == 0.0:
        return 1
    logz = math.log(z)
    total = 0.0
    logt = -special.gammaln(beta)
    for k in range(TERM_CAP):
        total += math.exp(min(logt, 709.0))
        lognext = (k + 1) * logz - special.gammaln((k + 1) * alpha + beta)
        ratio = math.exp(lognext - logt)
        if ratio < 1.0:
            tail = math.exp(min(lognext, 709.0)) / (1.0 - ratio)
            if tail < min(tol, EPS) * max(1.0, total):
                return k + 1
        logt = lognext
    raise ConvergenceError(f"matrix series for |z|={z:.3g} needs more than {TERM_CAP} terms")


def matrix_powers(A: np.ndarray, K: int):
    """Normalized powers ``P[k] = A^k / ||A||^k`` for k < K, and ``||A||_2``.

    Returns ``(P, norm, K_eff)`` where ``K_eff`` shrinks to the nilpotency
    index when some power of ``A`` is exactly zero.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    norm = float(np.linalg.norm(A, 2)) if A.size else 0.0
    if norm == 0.0:
        return np.eye(n)[None], 0.0, 1
    An = A / norm
    P = np.empty((K, n, n))
    P[0] = np.eye(n)
    for k in range(1, K):
        P[k] = P[k - 1] @ An
        if k <= n and not P[k].any():
            return P[:k], norm, k
    return P, norm, K


def nilpotency_index(A: np.ndarray):
    """Smallest k <= n with A^k == 0 exactly, or None."""
    A = np.asarray(A, dtype=float)
    P = np.eye(A.shape[0])
    for k in range(1, A.shape[0] + 1):
        P = P @ A
        if not P.any():
            return k
    return None


def sum_matrix_series(P: np.ndarray, norm: float, logc: np.ndarray, sign=None,
                      what: str = "matrix series") -> np.ndarray:
    """Evaluate ``sum_k A^k c_k`` for many coefficient columns.

    ``logc`` has shape (K, npts) and holds ``log|c_k|`` (``-inf`` for zeros);
    ``sign`` optionally gives the signs. The powers enter normalized, with
    ``k log||A||`` folded into the exponent so nothing overflows. Returns an
    array of shape (npts, n, n).
    """
    K = P.shape[0]
    logc = np.asarray(logc, dtype=float)[:K]
    if norm > 0.0:
        logc = logc + np.arange(K)[:, None] * math.log(norm)
    coef = np.exp(logc)
    if sign is not None:
        coef = coef * np.asarray(sign)[:K]
    npts = coef.shape[1]
    n = P.shape[1]
    s = np.zeros((npts, n, n))
    c = np.zeros((npts, n, n))
    pnorms = np.linalg.norm(P.reshape(K, -1), axis=1)
    mag = np.zeros(npts)
    for k in range(K):
        term = coef[k][:, None, None] * P[k]
        s, c = _neumaier_add(s, c, term)
        mag += np.abs(coef[k]) * pnorms[k]
    out = s + c
    size = np.linalg.norm(out.reshape(npts, -1), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = np.where(size > 0, EPS * mag / size, 0.0)
    worst = float(np.nanmax(loss)) if npts else 0.0
    if not worst <= CANCELLATION_FAIL:
        raise ConvergenceError(f"{what}: cancellation leaves relative accuracy ~{worst:.1e}; "
                               "the argument ||A|| t^alpha is too large for the series")
    if worst > CANCELLATION_WARN:
        warnings.warn(f"{what}: cancellation leaves relative accuracy ~{worst:.1e}",
                      PrecisionWarning, stacklevel=3)
    return out


def _as_times(t):
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise DomainError("times must be non-negative")
    return t_arr, np.ndim(t) == 0


def _check_square(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix has non-finite entries")
    return A


def ml_matrix(alpha: float, beta: float, A, t):
    """Matrix Mittag-Leffler function E_{alpha,beta}(A t^alpha).

    ``t`` may be a scalar (returns (n, n)) or an array (returns (len(t), n, n)).
    Nilpotent ``A`` is summed exactly over its finitely many nonzero powers.
    """
    if not (alpha > 0 and beta > 0):
        raise DomainError("ml_matrix needs alpha > 0 and beta > 0")
    A = _check_square(A)
    t_arr, scalar = _as_times(t)
    out = _ml_matrix(alpha, beta, A, t_arr)
    return out[0] if scalar else out


def _ml_matrix(alpha, beta, A, t_arr, shift=0.0):
    # sum_k A^k t^(k alpha + shift) / Gamma(k alpha + beta), t >= 0
    n = A.shape[0]
    tmax = float(t_arr.max()) if t_arr.size else 0.0
    nil = nilpotency_index(A)
    if nil is not None:
        K = nil
    else:
        K = series_length(alpha, beta, float(np.linalg.norm(A, 2)) * tmax ** alpha)
    P, norm, K = matrix_powers(A, K)
    k = np.arange(K)[:, None]
    with np.errstate(divide="ignore"):
        logt = np.log(t_arr)[None, :]
    expo = k * alpha + shift
    with np.errstate(invalid="ignore"):
        logc = np.where(expo == 0, 0.0, expo * logt) - special.gammaln(k * alpha + beta)
    # 1/Gamma at poles is zero; gammaln there is +inf so exp gives 0 already
    logc = np.where(np.isnan(logc), -np.inf, logc)
    if n == 0:
        return np.zeros((t_arr.size, 0, 0))
    return sum_matrix_series(P, norm, logc, what=f"E_({alpha:g},{beta:g})")


def alpha_exp(alpha: float, A, t):
    """alpha-exponential matrix ``t^(alpha-1) E_{alpha,alpha}(A t^alpha)`` for t > 0."""
    A = _check_square(A)
    t_arr, scalar = _as_times(t)
    if np.any(t_arr <= 0):
        raise DomainError("alpha_exp is singular at t = 0; need t > 0")
    out = _ml_matrix(alpha, alpha, A, t_arr, shift=alpha - 1.0)
    return out[0] if scalar else out


def phi_beta(order: Order, A, t):
    """Memory kernel ``Phi_beta(t) = t^(alpha+beta-1) E_{alpha,alpha+beta}(A t^alpha)``.

    At t = 0 the kernel is 0 when alpha + beta > 1, the identity when
    alpha + beta = 1, and undefined (DomainError) when alpha + beta < 1.
    """
    A = _check_square(A)
    t_arr, scalar = _as_times(t)
    a, b = order.alpha, order.beta
    if np.any(t_arr == 0) and a + b < 1.0:
        raise DomainError("Phi_beta(0) is singular when alpha + beta < 1")
    out = _ml_matrix(a, a + b, A, t_arr, shift=a + b - 1.0)
    return out[0] if scalar else out
