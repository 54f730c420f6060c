"""Fractional calculus on uniform grids.

Left/right Riemann-Liouville integrals use product-trapezoidal quadrature:
the piecewise-linear interpolant of the integrand is integrated exactly
against the algebraic kernel. Derivatives use Grunwald-Letnikov weights.
Every node-wise sum is a causal convolution and is evaluated with FFTs.

Functions that blow up like ``t**s`` (``-1 < s < 0``) at the origin are
carried as :class:`GridFn` with ``exponent=s``; their node-0 sample is NaN.
Near 0 they are assumed to expand as ``t**s (c_0 + c_1 t**d + c_2 t**(2d) + ...)``
with ``d = step`` (1 by default). The non-smooth terms are fitted on the first
nodes and handled in closed form, the remainder by the regular rules.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft
from scipy import special

from .errors import DimensionError, DomainError, IntegrabilityError

__all__ = [
    "TimeGrid",
    "GridFn",
    "SingularKernel",
    "causal_convolve",
    "frac_integral_left",
    "frac_integral_right",
    "rl_derivative",
    "rl_compose",
    "conv_singular",
    "product_weights",
    "gl_weights",
    "bdf2_weights",
    "graded_gauss_legendre",
    "singular_expansion",
    "power_end_correction",
    "trapezoid",
]


def fft_workers() -> int:
    """Worker count for FFTs, from FRACMEM_THREADS (0 or unset = all cores)."""
    raw = os.environ.get("FRACMEM_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        k = 0
    return -1 if k <= 0 else k


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 8:
            raise DomainError(f"N must be an integer >= 8, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


@dataclass
class GridFn:
    """Vector-valued samples on a grid, shape ``(N + 1, dim)``.

    ``exponent`` marks a function behaving like ``t**exponent`` near 0. A
    negative exponent makes the node-0 row undefined (stored as NaN); a
    non-negative one only records that f is not smooth at 0. ``step`` is the
    increment of the powers in its expansion at 0 (``None`` means 1).
    """

    grid: TimeGrid
    values: np.ndarray
    exponent: Optional[float] = None
    step: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.N + 1:
            raise DimensionError(
                f"expected {self.grid.N + 1} samples, got {v.shape[0]}")
        self.values = v
        if self.exponent is not None:
            if not self.exponent > -1.0:
                raise IntegrabilityError(
                    f"t**{self.exponent} is not integrable at 0")
            if self.exponent < 0:
                self.values[0] = np.nan
        if self.step is not None and not self.step > 0:
            raise DomainError("expansion step must be positive")
        if not np.all(np.isfinite(self.values[1:])):
            raise DomainError("grid function has non-finite samples")

    @property
    def singular(self) -> bool:
        """True when f is unbounded at 0 (node 0 undefined)."""
        return self.exponent is not None and self.exponent < 0

    @property
    def nonsmooth(self) -> bool:
        """True when f carries an expansion exponent at 0."""
        return self.exponent is not None

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_callable(cls, grid: TimeGrid, f: Callable, exponent=None, step=None) -> "GridFn":
        t = grid.nodes
        if exponent is not None and exponent < 0:
            inner = np.asarray(f(t[1:]), dtype=float).reshape(grid.N, -1)
            vals = np.vstack([np.full((1, inner.shape[1]), np.nan), inner])
        else:
            vals = np.asarray(f(t))
        return cls(grid, vals, exponent, step)

    def scaled(self, c: float) -> "GridFn":
        return GridFn(self.grid, c * self.values, self.exponent, self.step)

    def regular_values(self) -> np.ndarray:
        """Samples with the undefined node-0 row replaced by zeros."""
        v = self.values.copy()
        if self.singular:
            v[0] = 0.0
        return v


@dataclass
class SingularKernel:
    """Convolution kernel ``K(s) = s**(mu - 1) r(s)`` on ``(0, T]``.

    ``r`` maps an array of times to an array of shape ``(len, p, q)`` and must
    be finite at ``s = 0``.
    """

    mu: float
    r: Callable[[np.ndarray], np.ndarray]
    shape: tuple = field(default=(1, 1))
    # set when r is the constant 1/Gamma(mu) (pure Riemann-Liouville kernel)
    pure_power: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise IntegrabilityError(f"kernel exponent mu={self.mu} is not integrable")

    @classmethod
    def power(cls, alpha: float) -> "SingularKernel":
        """Riemann-Liouville kernel ``s**(alpha-1)/Gamma(alpha)``."""
        c = special.rgamma(alpha)
        return cls(alpha, lambda s: np.full((np.size(s), 1, 1), c), pure_power=True)


def causal_convolve(w: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``y_i = sum_{k=0}^{i} w_k f_{i-k}`` for all i.

    ``w`` has shape (L,) or (L, p, q) and ``f`` shape (L, q); the result has
    shape (L, p) (or (L, q) for scalar weights).
    """
    L = f.shape[0]
    size = scipy.fft.next_fast_len(2 * L, real=True)
    workers = fft_workers()
    Ff = scipy.fft.rfft(f, n=size, axis=0, workers=workers)
    Fw = scipy.fft.rfft(w, n=size, axis=0, workers=workers)
    if w.ndim == 1:
        Fy = Fw[:, None] * Ff
    else:
        Fy = np.einsum("fpq,fq->fp", Fw, Ff)
    return scipy.fft.irfft(Fy, n=size, axis=0, workers=workers)[:L]


def _second_diff_pow(k: np.ndarray, g: float) -> np.ndarray:
    # (k+1)^g - 2 k^g + (k-1)^g for k >= 1, relative error ~ k eps
    k = k.astype(float)
    with np.errstate(divide="ignore"):
        return k ** g * (np.expm1(g * np.log1p(1.0 / k)) + np.expm1(g * np.log1p(-1.0 / k)))


def _end_bracket(i: np.ndarray, g: float) -> np.ndarray:
    # g i^(g-1) - i^g + (i-1)^g for i >= 1
    i = i.astype(float)
    with np.errstate(divide="ignore"):
        return i ** g * (g / i + np.expm1(g * np.log1p(-1.0 / i)))


def product_weights(mu: float, h: float, L: int):
    """Product-trapezoid weights for ``int_0^{t_i} s**(mu-1) g(s) ds``.

    With g piecewise linear through ``g(s_k)`` the integral is
    ``sum_{k<i} w[k] g(s_k) + w_end[i] g(s_i)`` exactly. Returns ``(w, w_end)``,
    both of length L (``w_end[0]`` is 0).
    """
    scale = h ** mu / (mu * (mu + 1.0))
    w = np.empty(L)
    w[0] = scale
    k = np.arange(1, L)
    w[1:] = scale * _second_diff_pow(k, mu + 1.0)
    w_end = np.zeros(L)
    w_end[1:] = scale * _end_bracket(k, mu + 1.0)
    return w, w_end


def _falling_moment(i: np.ndarray, mu: float) -> np.ndarray:
    # int_{i-1}^{i} x^(mu-1) (i - x) dx for i >= 1
    i = i.astype(float)
    with np.errstate(divide="ignore"):
        lg = np.log1p(-1.0 / i)
    d_mu = -i ** mu * np.expm1(mu * lg)
    d_mu1 = -i ** (mu + 1.0) * np.expm1((mu + 1.0) * lg)
    return i * d_mu / mu - d_mu1 / (mu + 1.0)


def _first_panel_correction(Kfull, R, r_mid, f1, s, mu, h):
    """Swap the linear model of f on ``[0, h]`` for ``f_1 (t/h)**s``.

    Returns, per node, the power-law integral minus what the product rule
    assigned to that panel. ``Kfull[i] = K(t_i)`` (shape (L, p, q)).
    """
    L = Kfull.shape[0]
    out = np.zeros((L, Kfull.shape[1]))
    i = np.arange(1, L)
    scheme = h ** mu * _falling_moment(i, mu)[:, None, None] * R[:-1]
    model = np.zeros_like(scheme)
    # node 1: both factors singular; Beta moment with r frozen at h/2
    model[0] = h ** mu * special.beta(mu, s + 1.0) * r_mid
    if L > 2:
        # nodes i >= 2: K linear across the panel, x = t/h in [0, 1]
        c_i = 1.0 / (s + 1.0) - 1.0 / (s + 2.0)
        c_im1 = 1.0 / (s + 2.0)
        model[1:] = h * (c_i * Kfull[2:] + c_im1 * Kfull[1:-1])
    out[1:] = np.einsum("ipq,q->ip", model - scheme, f1)
    return out


def singular_expansion(f: GridFn, max_terms: int = 8, upper: float = 2.0):
    """Fit the leading terms ``sum_q c_q t**lam_q`` of f near 0.

    The powers are ``exponent + q * step`` below ``upper`` (at most
    ``max_terms``), plus 0 when f is unbounded. Coefficients are a least
    squares fit on nodes ``1..2Q``. Returns ``(lam, coef)`` with ``coef`` of
    shape (Q, dim).
    """
    sexp = f.exponent
    d = 1.0 if f.step is None else f.step
    lam = []
    q = 0
    while sexp + q * d < upper - 1e-12 and len(lam) < max_terms:
        lam.append(sexp + q * d)
        q += 1
    if sexp < 0 and not any(abs(x) < 1e-12 for x in lam):
        lam.append(0.0)
    lam = np.array(sorted(lam))
    P = min(2 * lam.size, f.grid.N)
    lam = lam[:P]
    k = np.arange(1, P + 1, dtype=float)
    # scaled fit: f(k h) = sum_q (c_q h^lam_q) k^lam_q
    M = k[:, None] ** lam[None, :]
    scaled = np.linalg.lstsq(M, f.values[1:P + 1], rcond=None)[0]
    coef = scaled / (f.grid.h ** lam)[:, None]
    return lam, coef


def _carried(exponent):
    # integer powers >= 0 are smooth and need no marker
    if exponent is None or (exponent >= 0 and abs(exponent - round(exponent)) < 1e-12):
        return None
    return exponent


def _conv_power_subtracted(mu, w, w_end, R, f: GridFn) -> GridFn:
    """Riemann-Liouville integral of a singular function by singularity subtraction."""
    grid = f.grid
    t = grid.nodes
    lam, coef = singular_expansion(f)
    p = np.zeros_like(f.values)
    with np.errstate(divide="ignore"):
        tp = t[1:, None] ** lam[None, :]
    p[1:] = tp @ coef
    rem = f.values - p
    rem[0] = 0.0
    out = causal_convolve(w[:, None, None] * R, rem)
    res = out.copy()
    exponent = f.exponent + mu
    ratio = special.gamma(lam + 1.0) * special.rgamma(lam + mu + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tq = t[1:, None] ** (lam + mu)[None, :]
    res[1:] += tq @ (ratio[:, None] * coef)
    res[0] = 0.0
    if abs(exponent) <= 1e-14:
        i0 = int(np.argmin(np.abs(lam - f.exponent)))
        res[0] = ratio[i0] * coef[i0]
        exponent = None
    elif exponent < 0:
        res[0] = np.nan
    return GridFn(grid, res, _carried(exponent), f.step)


def conv_singular(K: SingularKernel, f: GridFn) -> GridFn:
    """``(K * f)(t_i) = int_0^{t_i} K(s) f(t_i - s) ds`` by product integration.

    The factor ``s**(mu-1)`` is integrated exactly against the piecewise-linear
    interpolant of ``r(s) f(t_i - s)``. A singular ``f`` (``exponent`` set) is
    handled on its first panel by its power law.
    """
    grid = f.grid
    L = grid.N + 1
    h = grid.h
    s_nodes = grid.nodes
    R = np.asarray(K.r(s_nodes), dtype=float)
    if R.ndim != 3 or R.shape[0] != L:
        raise DimensionError("kernel smooth part must return shape (len(s), p, q)")
    if R.shape[1:] == (1, 1) and f.dim > 1:
        # scalar kernel acts componentwise
        R = R * np.eye(f.dim)
    if R.shape[2] != f.dim:
        raise DimensionError(f"kernel has {R.shape[2]} columns, function dim is {f.dim}")
    mu = K.mu
    w, w_end = product_weights(mu, h, L)
    if f.nonsmooth and K.pure_power:
        return _conv_power_subtracted(mu, w, w_end, R, f)
    fv = f.regular_values()
    out = causal_convolve(w[:, None, None] * R, fv)
    # the convolution used w[i] on f_0; the last panel needs w_end[i]
    out += (w_end - w)[:, None] * np.einsum("ipq,q->ip", R, fv[0])
    if f.singular:
        Kfull = np.zeros_like(R)
        Kfull[1:] = (s_nodes[1:] ** (mu - 1.0))[:, None, None] * R[1:]
        r_mid = np.asarray(K.r(np.array([0.5 * h])), dtype=float)[0]
        if r_mid.shape != R.shape[1:]:
            r_mid = r_mid * np.eye(f.dim)
        out += _first_panel_correction(Kfull, R, r_mid, fv[1], f.exponent, mu, h)
        # trapezoid error of the t^s profile on [h, inf), generalized
        # Euler-Maclaurin: h^(1+s) (zeta(-s) - 1/2 + 1/(1+s)) per unit of t^s
        sexp = f.exponent
        c = fv[1] / h ** sexp
        e = special.zeta(-sexp) - 0.5 + 1.0 / (1.0 + sexp)
        out[2:] -= h ** (1.0 + sexp) * e * np.einsum("ipq,q->ip", Kfull[2:], c)
        exponent = mu + f.exponent
    else:
        exponent = None
    res = out.copy()
    res[0] = 0.0
    if exponent is not None and abs(exponent) <= 1e-14:
        # t^0 behaviour: the origin value is the Beta-moment limit
        res[0] = special.beta(mu, f.exponent + 1.0) * (R[0] @ (fv[1] / h ** f.exponent))
        exponent = None
    elif exponent is not None and exponent > 0:
        exponent = None
    elif exponent is not None:
        res[0] = np.nan
    return GridFn(grid, res, exponent)


def frac_integral_left(alpha: float, f: GridFn) -> GridFn:
    """Left Riemann-Liouville integral ``I^alpha_{0+} f`` at all nodes.

    ``alpha = 0`` returns ``f`` unchanged. Smooth ``f`` gives second-order
    accuracy.
    """
    if alpha < 0:
        raise DomainError("fractional integral order must be >= 0")
    if alpha == 0:
        return f
    return conv_singular(SingularKernel.power(alpha), f)


def frac_integral_right(alpha: float, f: GridFn) -> GridFn:
    """Right Riemann-Liouville integral ``I^alpha_{T-} f`` (mirror of the left one)."""
    if alpha < 0:
        raise DomainError("fractional integral order must be >= 0")
    if alpha == 0:
        return f
    if f.singular:
        raise DomainError("right-sided integral needs samples defined at t = 0")
    flipped = GridFn(f.grid, f.values[::-1].copy())
    out = frac_integral_left(alpha, flipped)
    return GridFn(f.grid, out.values[::-1].copy())


def gl_weights(alpha: float, L: int) -> np.ndarray:
    """Grunwald-Letnikov weights ``w_0 = 1, w_k = w_{k-1} (1 - (alpha+1)/k)``."""
    w = np.empty(L)
    w[0] = 1.0
    k = np.arange(1, L)
    w[1:] = np.cumprod(1.0 - (alpha + 1.0) / k)
    return w


def bdf2_weights(alpha: float, L: int) -> np.ndarray:
    """Lubich weights: coefficients of ``(3/2 - 2 z + z**2 / 2)**alpha``.

    Second-order convolution quadrature for ``D^alpha`` on functions that
    vanish to sufficient order at 0. Computed by the power-series recurrence
    for a power of a polynomial.
    """
    a = (1.5, -2.0, 0.5)
    w = np.zeros(L)
    w[0] = a[0] ** alpha
    for k in range(1, L):
        acc = ((alpha + 1.0) - k) * a[1] * w[k - 1]
        if k >= 2:
            acc += (2.0 * (alpha + 1.0) - k) * a[2] * w[k - 2]
        w[k] = acc / (k * a[0])
    return w


_SCHEMES = {"gl": gl_weights, "bdf2": bdf2_weights}


def rl_derivative(alpha: float, f: GridFn, zero_tol: float = 1e-12, scheme: str = "gl") -> GridFn:
    """Riemann-Liouville derivative ``D^alpha_{0+} f`` by convolution quadrature.

    ``scheme="gl"`` is Grunwald-Letnikov, first-order accurate for regular
    ``f`` with ``f(0) = 0``; ``scheme="bdf2"`` uses the second-order Lubich
    weights (:func:`bdf2_weights`). If ``f(0) != 0``
    the result behaves like ``t**(-alpha)`` and node 0 is marked undefined.
    For singular ``f`` the fitted non-smooth terms ``c t**lam`` (see
    :func:`singular_expansion`) are differentiated exactly,
    ``Gamma(lam+1)/Gamma(lam+1-alpha) t**(lam-alpha)`` (zero at the Gamma
    pole), and only the remainder goes through the difference scheme.
    """
    if not (0.0 < alpha <= 1.0):
        raise DomainError("rl_derivative needs alpha in (0, 1]")
    grid = f.grid
    h = grid.h
    t = grid.nodes
    L = grid.N + 1
    if scheme not in _SCHEMES:
        raise DomainError(f"unknown derivative scheme {scheme!r}")
    w = _SCHEMES[scheme](alpha, L)
    fv = f.regular_values()
    exact = np.zeros_like(fv)
    exponent = None
    if f.nonsmooth:
        lam, coef = singular_expansion(f)
        arg = lam + 1.0 - alpha
        # snap rounding noise onto the Gamma poles 0, -1, ...
        arg = np.where((np.abs(arg - np.round(arg)) < 1e-12) & (arg < 0.5), np.round(arg), arg)
        ratio = special.gamma(lam + 1.0) * special.rgamma(arg)
        tp = t[1:, None] ** lam[None, :]
        fv = fv.copy()
        fv[1:] -= tp @ coef
        fv[0] = 0.0
        exact[1:] = (t[1:, None] ** (lam - alpha)[None, :]) @ (ratio[:, None] * coef)
        size = np.abs(coef).max(axis=1)
        live = (size > 1e-10 * max(size.max(), 1e-300)) & (ratio != 0.0)
        if np.any(live):
            exponent = _carried(float(np.min((lam - alpha)[live])))
    out = causal_convolve(w, fv) * h ** (-alpha) + exact
    scale = np.nanmax(np.abs(f.values)) if f.values.size else 0.0
    if not f.singular and np.any(np.abs(fv[0]) > zero_tol * max(scale, 1e-300)):
        exponent = -alpha if alpha < 1.0 else None
    if exponent is not None and exponent <= -1.0:
        raise IntegrabilityError(f"derivative behaves like t^{exponent:g} at 0")
    return GridFn(grid, out, exponent, f.step if exponent is not None else None)


def rl_compose(alpha: float, j: int, f: GridFn, scheme: str = "gl") -> GridFn:
    """``R^{alpha,j} f``: j-fold repeated ``rl_derivative`` (j = 0 is the identity)."""
    if j < 0 or int(j) != j:
        raise DomainError("composition count must be a non-negative integer")
    out = f
    for _ in range(int(j)):
        out = rl_derivative(alpha, out, scheme=scheme)
    return out


def graded_gauss_legendre(T: float, panels: int = 64, order: int = 12, smallest: float = 1e-15):
    """Composite Gauss-Legendre rule on ``[0, T]`` with panels graded toward 0.

    Breakpoints are ``T q**k`` (geometric, the smallest ``T*smallest``) plus 0,
    which resolves integrands smooth in ``s**alpha`` rather than in ``s``.
    Returns ``(nodes, weights)`` sorted by node.
    """
    if panels < 2:
        raise DomainError("need at least two panels")
    q = smallest ** (1.0 / (panels - 2)) if panels > 2 else smallest
    edges = np.concatenate([[0.0], T * q ** np.arange(panels - 2, -1, -1)])
    x, wx = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * wx[None, :]
    return nodes.ravel(), weights.ravel()


def power_end_correction(G: np.ndarray, h: float, powers) -> np.ndarray:
    """Trapezoid error of ``int_0 G(s) ds`` caused by ``s**p`` terms of G.

    ``G`` is sampled at ``s = k h`` with ``G[0]`` at ``s = 0``. Fitting
    ``G(s) - G(0) = sum_q c_q s**p_q + c s`` on the first nodes, each
    non-integer power contributes ``zeta(-p) h**(1+p) c_p`` (generalized
    Euler-Maclaurin) to the trapezoid sum; the returned array is that total.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        return power_end_correction(G[:, None], h, powers)[0]
    powers = [float(p) for p in powers if abs(p - round(p)) > 1e-12]
    if not powers:
        return np.zeros(G.shape[1])
    basis = powers + [1.0]
    if G.shape[0] < len(basis) + 2:
        return np.zeros(G.shape[1])
    k = np.arange(1, len(basis) + 1, dtype=float)
    M = k[:, None] ** np.array(basis)[None, :]
    coef = np.linalg.solve(M, G[1:len(basis) + 1] - G[0])
    corr = np.zeros(G.shape[1])
    for q, p in enumerate(powers):
        corr += special.zeta(-p) * h * coef[q]
    return corr


def trapezoid(f: GridFn, left_powers=(), right_powers=()) -> np.ndarray:
    """``int_0^T f dt`` by the trapezoid rule with endpoint power corrections.

    ``left_powers`` / ``right_powers`` list non-integer exponents ``p > 0`` of
    ``t**p`` / ``(T - t)**p`` terms of f at the two ends; their
    ``h**(1+p)`` error is removed. f must be regular.
    """
    if f.singular:
        raise DomainError("trapezoid needs a function regular at 0")
    v = f.values
    h = f.grid.h
    total = h * (v.sum(axis=0) - 0.5 * (v[0] + v[-1]))
    if len(left_powers):
        total -= power_end_correction(v, h, left_powers)
    if len(right_powers):
        total -= power_end_correction(v[::-1], h, right_powers)
    return total
