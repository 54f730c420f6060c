"""Steering the order-beta memory of a fractional system to a target.

Three control laws are provided:

* ``optimal_control`` -- minimizes the modified energy
  ``int_0^T |(T-t)^(alpha+beta-1) u(t)|^2 dt`` through the beta-Gramian
  ``Q_T = int_0^T E(A s^alpha) B B^T E(A s^alpha)^T ds`` with
  ``E = E_{alpha,alpha+beta}``;
* ``rank_steering`` -- needs ``rank B = n`` and inverts the memory kernel
  pointwise;
* ``kalman_steering`` -- needs the Kalman rank condition and combines
  repeated fractional derivatives of a bump-shaped profile.

Every law is checked by simulating the memory on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy import special

from .errors import (DimensionError, DomainError, IntegrabilityError, OrderError,
                     RankError, SingularGramianError)
from .fraccalc import (GridFn, TimeGrid, frac_integral_left, graded_gauss_legendre,
                       rl_compose)
from .specfun import Order, _ml_matrix
from .system import Constant, Control, FracSystem, _free, memory

__all__ = [
    "SteeringProblem",
    "GramianResult",
    "SteeringResult",
    "gramian",
    "f_target",
    "optimal_control",
    "energy",
    "weighted_inner",
    "rank_steering",
    "kalman_matrices",
    "kalman_steering",
    "bump",
    "free_memory_at_T",
    "verify_steering",
    "COND_LIMIT",
]

COND_LIMIT = 1e12
GRAMIAN_PANELS = 64
GL_ORDER = 12


@dataclass(frozen=True)
class SteeringProblem:
    """Drive ``M_beta(T)`` of ``sys`` to ``b`` on ``grid`` (horizon ``T``)."""

    sys: FracSystem
    beta: float
    T: float
    b: np.ndarray
    grid: TimeGrid
    allow_low_beta: bool = False

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if b.shape != (self.sys.n,):
            raise DimensionError(f"target must have length {self.sys.n}")
        if not math.isclose(self.T, self.grid.T, rel_tol=1e-14):
            raise DimensionError(f"horizon T={self.T} differs from the grid horizon {self.grid.T}")
        if self.beta < 0:
            raise OrderError("beta must be >= 0")
        if self.beta < 1.0 - self.sys.alpha - 1e-14 and not self.allow_low_beta:
            raise OrderError(f"memory needs beta >= 1 - alpha, got beta={self.beta:g}")
        object.__setattr__(self, "b", b)

    @property
    def order(self) -> Order:
        return Order(self.sys.alpha, self.beta)

    @property
    def end_exponent(self) -> float:
        """``1 - alpha - beta``, the power of ``T - t`` in the steering laws."""
        return 1.0 - self.sys.alpha - self.beta


@dataclass
class GramianResult:
    Q: np.ndarray
    condition_estimate: float
    min_eigenvalue_estimate: float


@dataclass
class SteeringResult:
    control: Control
    energy: float
    achieved: np.ndarray
    residual: float
    method: str
    energy_identity: Optional[float] = None
    gramian: Optional[GramianResult] = None
    extra: dict = field(default_factory=dict)


def _kernel_matrix(p: SteeringProblem, s: np.ndarray) -> np.ndarray:
    # E_{alpha, alpha+beta}(A s^alpha) at each s, shape (len(s), n, n)
    a = p.sys.alpha
    return _ml_matrix(a, a + p.beta, p.sys.A, np.asarray(s, dtype=float))


def gramian(p: SteeringProblem, panels: int = GRAMIAN_PANELS, order: int = GL_ORDER) -> GramianResult:
    """beta-controllability Gramian by graded composite Gauss-Legendre.

    The weight ``(T-t)^(2(1-alpha-beta))`` cancels the algebraic factors of
    the kernels, leaving ``E B B^T E^T`` which is bounded on ``[0, T]``.
    """
    s, w = graded_gauss_legendre(p.T, panels, order)
    EB = _kernel_matrix(p, s) @ p.sys.B
    Q = np.einsum("k,kim,kjm->ij", w, EB, EB)
    Q = 0.5 * (Q + Q.T)
    if not np.all(np.isfinite(Q)):
        raise SingularGramianError(math.inf, COND_LIMIT)
    eig = np.linalg.eigvalsh(Q)
    top = float(eig[-1]) if eig.size else 0.0
    low = float(eig[0]) if eig.size else 0.0
    cond = math.inf if low <= 0.0 else top / low
    return GramianResult(Q, cond, low)


def free_memory_at_T(p: SteeringProblem) -> np.ndarray:
    """``-int_0^T Phi_beta(T - tau) psi(tau) dtau``, the uncontrolled memory at T."""
    sys = p.sys
    if isinstance(sys.history, Constant):
        a = sys.alpha
        E = _ml_matrix(a, p.beta + 1.0, sys.A, np.array([p.T]), shift=p.beta)[0]
        return E @ sys.history.a
    return _free(sys, p.beta, p.grid).values[-1]


def f_target(p: SteeringProblem) -> np.ndarray:
    """``f_T = -b - int_0^T Phi_beta(T - tau) psi(tau) dtau``."""
    return -p.b + free_memory_at_T(p)


def _simulate(p: SteeringProblem, u: Control):
    M = memory(p.sys, p.beta, u, p.grid, allow_low_beta=True)
    achieved = M.values[-1].copy()
    return achieved, float(np.max(np.abs(achieved - p.b))) if achieved.size else 0.0


def _solve_spd(Q, f):
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(Q), f)
    except np.linalg.LinAlgError:
        return scipy.linalg.solve(Q, f, assume_a="sym")


def optimal_control(p: SteeringProblem, cond_limit: float = COND_LIMIT) -> SteeringResult:
    """Minimum modified-energy control

        u(t) = -(T-t)^(1-alpha-beta) B^T E(A (T-t)^alpha)^T Q_T^{-1} f_T.

    Refuses (SingularGramianError) when the Gramian condition estimate
    exceeds ``cond_limit``. The reported energy is ``<Q^{-1} f_T, f_T>``;
    ``extra["energy_quadrature"]`` holds the direct quadrature value.
    """
    G = gramian(p)
    if not G.condition_estimate <= cond_limit:
        raise SingularGramianError(G.condition_estimate, cond_limit)
    f = f_target(p)
    c = _solve_spd(G.Q, f)
    e = p.end_exponent
    B = p.sys.B
    T = p.T

    def gfunc(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return -np.einsum("im,kji,j->km", B, _kernel_matrix(p, s), c)

    def func(t):
        s = T - np.atleast_1d(np.asarray(t, dtype=float))
        with np.errstate(divide="ignore"):
            return s[:, None] ** e * gfunc(s)

    limit = -(B.T @ c) * special.rgamma(p.sys.alpha + p.beta)
    u = Control.from_callable(p.grid, func, mode="linear", end_exponent=e,
                              end_limit=limit, gfunc=gfunc)
    achieved, residual = _simulate(p, u)
    identity = float(c @ f)
    quad = energy(p.order, T, u)
    return SteeringResult(u, identity, achieved, residual, "gramian-optimal",
                          energy_identity=identity, gramian=G,
                          extra={"energy_quadrature": quad, "lagrange": c})


# ---------------------------------------------------------------- energy


def _panel_form(u: Control):
    """Per panel k (``s = T - t`` in ``[k h, (k+1) h]``) the coefficients of
    ``g = p + q x``, ``x = s/h - k``, where ``u = s^e g``."""
    if u.mode == "constant":
        v = u.values[:-1][::-1]
        return v, np.zeros_like(v), 0.0
    g = u.end_weighted()[::-1]
    return g[:-1], g[1:] - g[:-1], u.weight_exponent


def _panel_moments(omega: float, h: float, N: int) -> np.ndarray:
    """``int_{kh}^{(k+1)h} s^omega x^r ds`` for r = 0, 1, 2 and k < N."""
    mom = np.empty((3, N))
    for r in range(3):
        mom[r, 0] = 1.0 / (omega + r + 1.0) if omega + r + 1.0 > 0 else math.inf
    x, w = np.polynomial.legendre.leggauss(8)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    k = np.arange(1, N)[:, None]
    base = (k + x[None, :]) ** omega
    for r in range(3):
        mom[r, 1:] = base @ (w * x ** r)
    return mom * h ** (1.0 + omega)


def _grid_inner(ord_: Order, T: float, u: Control, v: Control) -> float:
    if u.grid != v.grid:
        raise DimensionError("controls live on different grids")
    grid = u.grid
    pu, qu, eu = _panel_form(u)
    pv, qv, ev = _panel_form(v)
    omega = 2.0 * (ord_.alpha + ord_.beta - 1.0) + eu + ev
    c0 = np.einsum("km,km->k", pu, pv)
    c1 = np.einsum("km,km->k", pu, qv) + np.einsum("km,km->k", qu, pv)
    c2 = np.einsum("km,km->k", qu, qv)
    if omega <= -1.0 and (abs(c0[0]) > 0 or abs(c1[0]) > 0 or abs(c2[0]) > 0):
        raise IntegrabilityError(
            f"weighted integrand behaves like (T-t)^{omega:g} at T and is not integrable")
    mom = _panel_moments(omega, grid.h, grid.N)
    with np.errstate(invalid="ignore"):
        terms = c0 * mom[0] + c1 * mom[1] + c2 * mom[2]
    return float(np.sum(np.nan_to_num(terms, nan=0.0)))


def _func_inner(ord_: Order, T: float, u: Control, v: Control) -> float:
    s, w = graded_gauss_legendre(T, GRAMIAN_PANELS, GL_ORDER)
    base = 2.0 * (ord_.alpha + ord_.beta - 1.0)

    def weighted(c):
        if c.gfunc is not None:
            return np.asarray(c.gfunc(s), dtype=float).reshape(s.size, -1), c.weight_exponent
        return np.asarray(c.func(T - s), dtype=float).reshape(s.size, -1), 0.0

    gu, eu = weighted(u)
    gv, ev = weighted(v)
    omega = base + eu + ev
    if omega <= -1.0:
        lim = np.einsum("km,km->k", gu[:1], gv[:1])[0]
        if lim != 0.0:
            raise IntegrabilityError(
                f"weighted integrand behaves like (T-t)^{omega:g} at T and is not integrable")
    return float(np.sum(w * s ** omega * np.einsum("km,km->k", gu, gv)))


def weighted_inner(ord_: Order, T: float, u: Control, v: Control) -> float:
    """``int_0^T (T-t)^(2(alpha+beta-1)) <u(t), v(t)> dt``.

    Uses the exact control callables when both controls carry one (graded
    Gauss-Legendre toward ``t = T``); otherwise integrates the grid
    representation with the algebraic weight treated exactly on the last
    panel.
    """
    if not math.isclose(T, u.grid.T, rel_tol=1e-14):
        raise DimensionError("horizon differs from the control grid")
    exact = all(c.gfunc is not None or (c.func is not None and not c.end_singular)
                for c in (u, v))
    if exact:
        return _func_inner(ord_, T, u, v)
    return _grid_inner(ord_, T, u, v)


def energy(ord_: Order, T: float, u: Control) -> float:
    """Modified energy ``int_0^T |(T-t)^(alpha+beta-1) u(t)|^2 dt``."""
    return max(weighted_inner(ord_, T, u, u), 0.0)


# ---------------------------------------------------------------- rank law


def _inverse_kernel(p: SteeringProblem, s: np.ndarray, cond_limit: float) -> np.ndarray:
    E = _kernel_matrix(p, s)
    conds = np.linalg.cond(E)
    if not np.all(conds <= cond_limit):
        k = int(np.argmax(np.where(np.isfinite(conds), conds, np.inf)))
        raise RankError(f"E_(alpha,alpha+beta)(A s^alpha) is not invertible at s={s[k]:.4g} "
                        f"(condition {conds[k]:.2e})")
    return np.linalg.inv(E)


def rank_steering(p: SteeringProblem, cond_limit: float = COND_LIMIT) -> SteeringResult:
    """Steering law for ``rank B = n``:

        u(t) = (1/T) B^+ g(T-t) (b + int_0^T Phi_beta(T-tau) psi(tau) dtau),
        g(s) = s^(1-alpha-beta) E_{alpha,alpha+beta}(A s^alpha)^{-1},

    so that ``Phi_beta(s) g(s) = I`` and the memory reaches ``b`` exactly.
    For ``A = 0`` this is ``Gamma(alpha+beta)/T (T-t)^(1-alpha-beta) B^+ (...)``.
    """
    sys = p.sys
    B = sys.B
    rank = int(np.linalg.matrix_rank(B))
    if rank < sys.n:
        raise RankError(f"rank B = {rank} < n = {sys.n}; the rank law needs full row rank", rank)
    Bp = B.T @ np.linalg.inv(B @ B.T)
    v = p.b - free_memory_at_T(p)
    e = p.end_exponent
    T = p.T
    # check invertibility on the grid and at the end point once
    _inverse_kernel(p, np.append(T - p.grid.nodes, 0.0), cond_limit)

    def gfunc(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.einsum("mi,kij,j->km", Bp, _inverse_kernel(p, s, cond_limit), v) / T

    def func(t):
        s = T - np.atleast_1d(np.asarray(t, dtype=float))
        with np.errstate(divide="ignore"):
            return s[:, None] ** e * gfunc(s)

    u = Control.from_callable(p.grid, func, mode="linear", end_exponent=e,
                              end_limit=gfunc(np.array([0.0]))[0], gfunc=gfunc)
    achieved, residual = _simulate(p, u)
    return SteeringResult(u, energy(p.order, T, u), achieved, residual, "rank")


# ---------------------------------------------------------------- Kalman law


def kalman_matrices(A, B, rtol: Optional[float] = None) -> list:
    """Blocks ``K_1..K_n`` (each m x n) with ``sum_j A^(j-1) B K_j = I``.

    The minimum-Frobenius-norm solution, ``K = pinv([B, AB, ..., A^(n-1) B])``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = B.shape
    if A.shape != (n, n):
        raise DimensionError("A and B are inconsistent")
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    rank = int(np.linalg.matrix_rank(C, tol=rtol))
    if rank < n:
        raise RankError(f"Kalman matrix has rank {rank} < n = {n}", rank)
    K = np.linalg.pinv(C)
    return [K[j * m:(j + 1) * m] for j in range(n)]


def bump(grid: TimeGrid, order: int) -> np.ndarray:
    """``phi(t) = c (t/T)^p (1 - t/T)^p`` normalized to unit integral."""
    T = grid.T
    x = grid.nodes / T
    c = 1.0 / (T * special.beta(order + 1.0, order + 1.0))
    return c * x ** order * (1.0 - x) ** order


def kalman_steering(p: SteeringProblem, bump_order: Optional[int] = None,
                    cond_limit: float = COND_LIMIT, scheme: str = "bdf2") -> SteeringResult:
    """Steering law for the Kalman rank condition:

        u = K_1 mu + K_2 D^alpha mu + ... + K_n R^{alpha,n-1} mu,
        mu(t) = g(t) (b + int_0^T Phi_beta(T-tau) psi(tau) dtau) phi(t),

    with ``g(t) = (T-t)^(1-alpha-beta) E_{alpha,alpha+beta}(A (T-t)^alpha)^{-1}``
    and the bump ``phi`` of order ``bump_order`` (default n + 2). The
    fractional derivatives use the second-order Lubich weights by default
    (``scheme="gl"`` selects Grunwald-Letnikov).
    """
    sys = p.sys
    n = sys.n
    order = n + 2 if bump_order is None else int(bump_order)
    if order < 0:
        raise DomainError("bump order must be non-negative")
    Ks = kalman_matrices(sys.A, sys.B)
    v = p.b - free_memory_at_T(p)
    grid = p.grid
    s = p.T - grid.nodes
    e = p.end_exponent
    Einv = _inverse_kernel(p, s, cond_limit)
    phi = bump(grid, order)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(s > 0, s ** e, 0.0 if e > 0 else (1.0 if e == 0 else np.nan)) * phi
    # (T-t)^e phi(t) -> 0 at T once the bump order exceeds -e; below that
    # (bump order 0 with alpha + beta > 1) mu and u blow up like (T-t)^e
    end_singular = order + e < 0
    if order + e > 0:
        scale[-1] = 0.0
    elif end_singular:
        scale[-1] = 0.0
    mu_vals = scale[:, None] * np.einsum("kij,j->ki", Einv, v)
    if not np.all(np.isfinite(mu_vals)):
        raise IntegrabilityError("mu is unbounded at T; raise the bump order")
    mu = GridFn(grid, mu_vals)
    chain = [mu]
    for _ in range(1, n):
        chain.append(rl_compose(sys.alpha, 1, chain[-1], scheme=scheme))
    u_vals = np.zeros((grid.N + 1, sys.m))
    undefined = False
    for K, R in zip(Ks, chain):
        vals = R.values
        if R.singular:
            undefined = True
            vals = R.regular_values()
        u_vals += vals @ K.T
    if end_singular:
        # the chain is causal, so only the last node sees the placeholder;
        # for n = 1 the limit of (T-t)^(-e) u is K_1 E(0)^{-1} v phi(T)
        limit = Ks[0] @ (Einv[-1] @ v) * phi[-1] if n == 1 else None
        u = Control(grid, u_vals, mode="linear", end_exponent=e, end_limit=limit)
    else:
        u = Control(grid, u_vals, mode="linear")
    achieved, residual = _simulate(p, u)
    extra = {"bump_order": order, "scheme": scheme, "origin_singular": undefined,
             "predicted_defect": _kalman_defect(p, Ks, chain)}
    return SteeringResult(u, energy(p.order, p.T, u), achieved, residual, "kalman", extra=extra)


def _kalman_defect(p: SteeringProblem, Ks, chain) -> np.ndarray:
    """Memory offset ``M_beta(T) - b`` the Kalman law leaves when ``beta > 0``.

    Moving ``D^alpha`` across the memory kernel by parts gives
    ``D^alpha_{T-} Phi_beta(T - .) = A Phi_beta(T - .) + (T - .)^(beta-1)/Gamma(beta)``;
    the second term survives as
    ``sum_j sum_{i<j-1} A^i B K_j (I^beta R^{alpha,j-2-i} mu)(T)``.
    """
    sys = p.sys
    out = np.zeros(sys.n)
    if p.beta == 0.0:
        return out
    ends = [frac_integral_left(p.beta, R).values[-1] if not R.singular
            else np.full(sys.n, np.nan) for R in chain]
    for j in range(2, sys.n + 1):
        BK = sys.B @ Ks[j - 1]
        for i in range(j - 1):
            out += np.linalg.matrix_power(sys.A, i) @ BK @ ends[j - 2 - i]
    return out


# ---------------------------------------------------------------- verification


def verify_steering(p: SteeringProblem, r) -> dict:
    """Re-simulate a control (a SteeringResult or a bare Control) and report.

    Keys: ``residual``, ``achieved``, ``energy``, and, when the Gramian is
    usable, ``optimal_energy`` and ``energy_gap`` (relative difference to
    ``<Q^{-1} f_T, f_T>``).
    """
    u = r.control if isinstance(r, SteeringResult) else r
    achieved, residual = _simulate(p, u)
    report = {"residual": residual, "achieved": achieved, "energy": energy(p.order, p.T, u)}
    try:
        G = gramian(p)
        if G.condition_estimate <= COND_LIMIT:
            f = f_target(p)
            opt = float(_solve_spd(G.Q, f) @ f)
            report["optimal_energy"] = opt
            report["gramian_condition"] = G.condition_estimate
            report["energy_gap"] = abs(report["energy"] - opt) / opt if opt > 0 else abs(report["energy"])
    except (SingularGramianError, np.linalg.LinAlgError):
        pass
    return report
