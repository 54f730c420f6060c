"""Initialized fractional LTI systems ``D^alpha x = A x + B u`` and their memory.

The trajectory and the order-beta memory are convolutions of ``B u - psi``
with the kernels

    S(t)      = t^(alpha-1) E_{alpha,alpha}(A t^alpha)
    Phi_b(t)  = t^(alpha+b-1) E_{alpha,alpha+b}(A t^alpha)

Both are power series ``sum_j A^j t^(g_j - 1) / Gamma(g_j)`` with
``g_j = (j+1) alpha + b`` (``b = 0`` for S), so every convolution is a sum
of Riemann-Liouville integrals ``I^{g_j}``, each integrated with exact
weights for the algebraic factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

from .errors import DimensionError, DomainError, OrderError
from .fraccalc import (GridFn, TimeGrid, causal_convolve, frac_integral_left,
                       power_end_correction, product_weights)
from .specfun import _ml_matrix, nilpotency_index, series_length

__all__ = [
    "Constant",
    "Sampled",
    "FracSystem",
    "Control",
    "history_psi",
    "trajectory",
    "memory",
    "kernel_terms",
]


@dataclass(frozen=True)
class Constant:
    """Pre-history ``x(t) = a`` on ``(-inf, 0]``."""

    a: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise DimensionError("constant history must be a finite vector")
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class Sampled:
    """Forward trace ``psi`` of an arbitrary pre-history, sampled on [0, T]."""

    psi: GridFn


History = Union[Constant, Sampled]


@dataclass(frozen=True)
class FracSystem:
    """``D^alpha_{0+} x = A x + B u`` with initialization described by ``history``."""

    A: np.ndarray
    B: np.ndarray
    alpha: float
    history: History = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionError(f"B must have {A.shape[0]} rows, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise DomainError("A and B must be finite")
        if not (0.0 < self.alpha <= 1.0):
            raise OrderError(f"alpha must lie in (0, 1], got {self.alpha}")
        n = A.shape[0]
        hist = self.history
        if hist is None:
            hist = Constant(np.zeros(n))
        if isinstance(hist, Constant) and hist.a.shape != (n,):
            raise DimensionError(f"history vector must have length {n}")
        if isinstance(hist, Sampled) and hist.psi.dim != n:
            raise DimensionError(f"sampled history must have dimension {n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "history", hist)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_history(self, history: History) -> "FracSystem":
        return FracSystem(self.A, self.B, self.alpha, history)


@dataclass
class Control:
    """Control samples ``u(t_i)``, shape ``(N+1, m)``.

    mode
        ``"constant"``: ``u = u_k`` on ``[t_k, t_{k+1})`` (the last sample is
        unused); ``"linear"``: piecewise-linear interpolation.
    end_exponent
        If set, ``u`` behaves like ``(T-t)**end_exponent`` near ``T``. A
        negative value makes the last sample undefined (NaN); memory at ``T``
        is then integrated with the weight ``(T-t)**end_exponent`` exact.
    end_limit
        ``lim (T-t)**(-end_exponent) u(t)`` at ``T``; extrapolated when absent.
    func
        Optional exact ``u(t)`` (vectorized, shape ``(len(t), m)``) used by
        quadratures that do not need the grid.
    gfunc
        Optional exact ``g(s) = s**(-end_exponent) u(T - s)`` as a function of
        the distance ``s`` to the horizon; preferred over ``func`` near ``T``.
    """

    grid: TimeGrid
    values: np.ndarray
    mode: str = "constant"
    end_exponent: Optional[float] = None
    end_limit: Optional[np.ndarray] = None
    func: Optional[Callable] = field(default=None, repr=False)
    gfunc: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.N + 1:
            raise DimensionError(f"control needs {self.grid.N + 1} samples, got {v.shape[0]}")
        if self.mode not in ("constant", "linear"):
            raise DomainError(f"unknown control mode {self.mode!r}")
        v = v.copy()
        if self.end_singular:
            v[-1] = np.nan
        if not np.all(np.isfinite(v[:-1])) or not (self.end_singular or np.all(np.isfinite(v[-1]))):
            raise DomainError("control samples must be finite")
        self.values = v
        if self.end_limit is not None:
            self.end_limit = np.asarray(self.end_limit, dtype=float).reshape(v.shape[1])

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def weight_exponent(self) -> float:
        """Power of ``T - t`` factored out of ``u`` (0 unless linear with an end exponent)."""
        if self.mode == "linear" and self.end_exponent is not None:
            return float(self.end_exponent)
        return 0.0

    @property
    def end_singular(self) -> bool:
        return self.end_exponent is not None and self.end_exponent < 0

    @classmethod
    def zeros(cls, grid: TimeGrid, m: int, mode: str = "constant") -> "Control":
        return cls(grid, np.zeros((grid.N + 1, m)), mode)

    @classmethod
    def from_callable(cls, grid: TimeGrid, f: Callable, mode: str = "linear",
                      end_exponent=None, end_limit=None, gfunc=None) -> "Control":
        """Sample ``f`` (vectorized in t) at the nodes, skipping ``t = T`` if singular there."""
        t = grid.nodes
        singular = end_exponent is not None and end_exponent < 0
        tt = t[:-1] if singular else t
        vals = np.asarray(f(tt), dtype=float).reshape(tt.size, -1)
        if singular:
            vals = np.vstack([vals, np.full((1, vals.shape[1]), np.nan)])
        return cls(grid, vals, mode, end_exponent, end_limit, f, gfunc)

    def regular_values(self) -> np.ndarray:
        v = self.values.copy()
        if self.end_singular:
            v[-1] = 0.0
        return v

    def end_weighted(self) -> np.ndarray:
        """Samples of ``g = (T-t)**(-e) u`` including the limit at ``T``."""
        e = self.end_exponent or 0.0
        s = self.grid.T - self.grid.nodes
        g = np.empty_like(self.values)
        g[:-1] = self.values[:-1] * s[:-1, None] ** (-e)
        if self.end_limit is not None:
            g[-1] = self.end_limit
        elif e == 0.0:
            g[-1] = self.values[-1]
        else:
            g[-1] = 2.0 * g[-2] - g[-3]
        return g


def history_psi(sys: FracSystem, t: float) -> np.ndarray:
    """Initialization function ``psi(t)``.

    Constant history gives ``-a t^(-alpha) / Gamma(1-alpha)``, which vanishes
    identically for ``alpha = 1``. Sampled histories are looked up at the
    grid node matching ``t``.
    """
    hist = sys.history
    if isinstance(hist, Constant):
        a = hist.a
        if not a.any():
            return np.zeros(sys.n)
        if sys.alpha == 1.0:
            return np.zeros(sys.n)
        if not t > 0:
            raise DomainError("psi of a constant history is singular at t = 0")
        return -a * t ** (-sys.alpha) * special.rgamma(1.0 - sys.alpha)
    psi = hist.psi
    i = int(round(t / psi.grid.h))
    if not (0 <= i <= psi.grid.N) or not math.isclose(i * psi.grid.h, t, rel_tol=1e-12, abs_tol=1e-14):
        raise DomainError(f"t = {t} is not a node of the history grid")
    if psi.singular and i == 0:
        raise DomainError("sampled psi is undefined at t = 0")
    return psi.values[i].copy()


def kernel_terms(alpha: float, beta: float, A: np.ndarray, T: float) -> int:
    """Number of series terms of ``Phi_beta`` needed on ``[0, T]``."""
    nil = nilpotency_index(A)
    if nil is not None:
        return nil
    z = float(np.linalg.norm(A, 2)) * T ** alpha
    return series_length(alpha, alpha + beta, z)


def _matrix_sum(A, terms):
    # sum_j A^j terms[j], Horner from the top
    out = terms[-1]
    for v in reversed(terms[:-1]):
        out = v + out @ A.T
    return out


def _pc_weights(g: float, h: float, L: int) -> np.ndarray:
    # exact weights of int (t-tau)^(g-1)/Gamma(g) for piecewise-constant data
    m = np.arange(L, dtype=float)
    c = np.zeros(L)
    with np.errstate(divide="ignore"):
        c[1:] = -m[1:] ** g * np.expm1(g * np.log1p(-1.0 / m[1:]))
    return c * math.exp(g * math.log(h) - special.gammaln(g + 1.0))


def _power_integral(g: float, v: np.ndarray, grid: TimeGrid, mode: str) -> np.ndarray:
    """``I^g`` of regular samples ``v`` (shape (L, d)) at every node."""
    if mode == "constant":
        return causal_convolve(_pc_weights(g, grid.h, grid.N + 1), v)
    return frac_integral_left(g, GridFn(grid, v)).values


def _end_node(g: float, e: float, Gv: np.ndarray, grid: TimeGrid) -> np.ndarray:
    # int_0^T (T-tau)^(g-1)/Gamma(g) (T-tau)^e G(tau) dtau, G piecewise linear
    L = grid.N + 1
    w, w_end = product_weights(g + e, grid.h, L)
    rev = Gv[::-1]
    val = w @ rev + w_end[-1] * rev[-1] - w[-1] * rev[-1]
    return val * special.rgamma(g)


def _forced(sys: FracSystem, beta: float, u: Control, grid: TimeGrid) -> np.ndarray:
    """``int_0^t K(t-tau) B u(tau) dtau`` with K = Phi_beta (beta = 0: S)."""
    if u.grid != grid:
        raise DimensionError("control grid differs from the simulation grid")
    if u.m != sys.m:
        raise DimensionError(f"control has {u.m} channels, system expects {sys.m}")
    a = sys.alpha
    K = kernel_terms(a, beta, sys.A, grid.T)
    Bu = u.regular_values() @ sys.B.T
    end = u.mode == "linear" and u.end_exponent is not None
    if end:
        Bg = u.end_weighted() @ sys.B.T
    terms, ends = [], []
    for j in range(K):
        g = (j + 1) * a + beta
        terms.append(_power_integral(g, Bu, grid, u.mode))
        if end:
            ends.append(_end_node(g, u.end_exponent, Bg, grid))
    out = _matrix_sum(sys.A, terms)
    if end:
        out[-1] = _matrix_sum(sys.A, ends)
        if abs(a + beta + u.end_exponent - 1.0) < 1e-12:
            out[-1] -= special.rgamma(a + beta) * _end_power_correction(a, Bg[::-1], grid.h)
    return out


def _end_power_correction(alpha: float, G: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid error of ``int_0 G(s) ds`` from ``s**alpha``-type terms of G."""
    if alpha >= 1.0 or G.shape[0] < 5:
        return np.zeros(G.shape[1])
    powers = [alpha] if alpha >= 0.5 else [alpha, 2.0 * alpha]
    return power_end_correction(G, h, powers)


def _free(sys: FracSystem, beta: float, grid: TimeGrid) -> GridFn:
    """Contribution of the initialization, ``-int_0^t K(t-tau) psi(tau) dtau``."""
    hist = sys.history
    a = sys.alpha
    t = grid.nodes
    if isinstance(hist, Constant):
        # sum_j A^j t^(j alpha + beta) / Gamma(j alpha + beta + 1) a
        E = _ml_matrix(a, beta + 1.0, sys.A, t, shift=beta)
        return GridFn(grid, E @ hist.a)
    psi = hist.psi
    if psi.grid != grid:
        raise DimensionError("sampled history grid differs from the simulation grid")
    K = kernel_terms(a, beta, sys.A, grid.T)
    parts = [frac_integral_left((j + 1) * a + beta, psi) for j in range(K)]
    exponent = parts[0].exponent
    vals = [p.values.copy() for p in parts]
    for v in vals:
        v[0] = np.nan_to_num(v[0], nan=0.0)
    out = -_matrix_sum(sys.A, vals)
    return GridFn(grid, out, exponent)


def _combine(free: GridFn, forced: np.ndarray, u: Control) -> GridFn:
    vals = free.values + forced
    if free.singular:
        return GridFn(free.grid, vals, free.exponent)
    return GridFn(free.grid, vals)


def trajectory(sys: FracSystem, u: Optional[Control] = None, grid: Optional[TimeGrid] = None) -> GridFn:
    """Forward trajectory ``gamma(t, psi, u)`` at every node.

    A constant history enters through ``E_alpha(A t^alpha) a``; a sampled one
    through the singular convolution of its trace with the alpha-exponential.
    """
    grid = _pick_grid(u, grid)
    u = u if u is not None else Control.zeros(grid, sys.m)
    return _combine(_free(sys, 0.0, grid), _forced(sys, 0.0, u, grid), u)


def memory(sys: FracSystem, beta: float, u: Optional[Control] = None,
           grid: Optional[TimeGrid] = None, allow_low_beta: bool = False) -> GridFn:
    """Memory of order ``beta``, ``M_beta = I^beta gamma``, at every node.

    Requires ``beta >= 1 - alpha`` unless ``allow_low_beta`` is set (the
    kernel formula itself is meaningful for any ``beta >= 0``). For a
    constant history the free part is ``t^beta E_{alpha,beta+1}(A t^alpha) a``,
    whose limit at 0 is ``a`` when ``beta = 0`` and 0 otherwise.
    """
    if beta < 0:
        raise OrderError("memory order beta must be >= 0")
    if beta < 1.0 - sys.alpha - 1e-14 and not allow_low_beta:
        raise OrderError(
            f"memory needs beta >= 1 - alpha = {1.0 - sys.alpha:g}, got {beta:g}")
    grid = _pick_grid(u, grid)
    u = u if u is not None else Control.zeros(grid, sys.m)
    return _combine(_free(sys, beta, grid), _forced(sys, beta, u, grid), u)


def _pick_grid(u, grid):
    if grid is None:
        if u is None:
            raise DomainError("need a grid or a control")
        return u.grid
    return grid
