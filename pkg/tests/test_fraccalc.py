import math

import numpy as np
import pytest

from fracmem.errors import DimensionError, DomainError, IntegrabilityError
from fracmem.fraccalc import (GridFn, SingularKernel, TimeGrid, bdf2_weights, causal_convolve,
                              conv_singular, frac_integral_left, frac_integral_right, gl_weights,
                              graded_gauss_legendre, power_end_correction, product_weights,
                              rl_compose, rl_derivative, singular_expansion, trapezoid)
from fracmem.specfun import Order, alpha_exp, ml_matrix, phi_beta


def monomial_integral(p, alpha, t):
    return math.gamma(p + 1) / math.gamma(p + 1 + alpha) * t ** (p + alpha)


def orders(errs):
    errs = np.asarray(errs)
    return np.log2(errs[:-1] / errs[1:])


# ---------------------------------------------------------------- grid types


def test_time_grid():
    g = TimeGrid(2.0, 16)
    assert g.h == 0.125
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0 and g.nodes.size == 17
    assert g.refine().N == 32
    with pytest.raises(DomainError):
        TimeGrid(1.0, 4)
    with pytest.raises(DomainError):
        TimeGrid(0.0, 16)


def test_grid_fn_shapes_and_flags():
    g = TimeGrid(1.0, 8)
    f = GridFn(g, np.arange(9.0))
    assert f.dim == 1 and not f.singular and not f.nonsmooth
    with pytest.raises(DimensionError):
        GridFn(g, np.zeros(8))
    s = GridFn.from_callable(g, lambda t: t ** -0.5, exponent=-0.5)
    assert s.singular and np.isnan(s.values[0, 0])
    assert s.regular_values()[0, 0] == 0.0
    with pytest.raises(IntegrabilityError):
        GridFn(g, np.ones(9), exponent=-1.0)
    with pytest.raises(DomainError):
        GridFn(g, np.full(9, np.inf))
    half = GridFn.from_callable(g, np.sqrt, exponent=0.5)
    assert half.nonsmooth and not half.singular and half.values[0, 0] == 0.0


def test_causal_convolve_matches_direct_sum():
    rng = np.random.default_rng(0)
    L = 50
    w = rng.normal(size=L)
    f = rng.normal(size=(L, 3))
    direct = np.array([sum(w[k] * f[i - k] for k in range(i + 1)) for i in range(L)])
    assert np.allclose(causal_convolve(w, f), direct, rtol=1e-12, atol=1e-12)
    W = rng.normal(size=(L, 2, 3))
    direct = np.array([sum(W[k] @ f[i - k] for k in range(i + 1)) for i in range(L)])
    assert np.allclose(causal_convolve(W, f), direct, rtol=1e-12, atol=1e-12)


def test_product_weights_integrate_linears_exactly():
    mu, h, L = 0.4, 0.1, 12
    w, w_end = product_weights(mu, h, L)
    t = h * np.arange(L)
    i = L - 1
    # int_0^{t_i} s^(mu-1) (a + b s) ds with samples g(s_k) = a + b s_k
    g = 2.0 + 3.0 * t
    approx = np.sum(w[:i] * g[:i]) + w_end[i] * g[i]
    exact = 2.0 * t[i] ** mu / mu + 3.0 * t[i] ** (mu + 1) / (mu + 1)
    assert approx == pytest.approx(exact, rel=1e-13)


# ---------------------------------------------------------------- integrals


def test_alpha_zero_is_identity():
    g = TimeGrid(1.0, 32)
    f = GridFn(g, np.cos(g.nodes))
    assert np.array_equal(frac_integral_left(0.0, f).values, f.values)
    assert np.array_equal(frac_integral_right(0.0, f).values, f.values)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8, 1.0, 1.5])
def test_left_integral_of_low_powers_is_exact(alpha):
    g = TimeGrid(1.0, 64)
    t = g.nodes
    for p in (0, 1):
        got = frac_integral_left(alpha, GridFn(g, t ** p)).values[:, 0]
        assert np.allclose(got, monomial_integral(p, alpha, t), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_left_integral_second_order(alpha):
    errs = []
    for N in (128, 256, 512, 1024):
        g = TimeGrid(1.0, N)
        t = g.nodes
        got = frac_integral_left(alpha, GridFn(g, np.cos(t) + t ** 2)).values[:, 0]
        # I^a cos = sum_k (-1)^k t^(2k+a)/Gamma(2k+1+a)
        ref = sum((-1) ** k * t ** (2 * k + alpha) / math.gamma(2 * k + 1 + alpha) for k in range(20))
        ref += monomial_integral(2, alpha, t)
        errs.append(np.max(np.abs(got - ref)))
    assert orders(errs).min() >= 1.8


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_right_integral_of_one(alpha):
    g = TimeGrid(2.0, 64)
    got = frac_integral_right(alpha, GridFn(g, np.ones(65))).values[:, 0]
    assert np.allclose(got, (2.0 - g.nodes) ** alpha / math.gamma(alpha + 1), rtol=1e-12, atol=1e-14)


def test_declared_power_is_integrated_exactly():
    g = TimeGrid(1.0, 256)
    t = g.nodes
    for p in (-0.6, 0.25, 0.5, 1.5):
        f = GridFn.from_callable(g, lambda s: s ** p, exponent=p)
        for alpha in (0.3, 0.8):
            got = frac_integral_left(alpha, f)
            ref = monomial_integral(p, alpha, t[1:])
            assert np.allclose(got.values[1:, 0], ref, rtol=1e-12)


def test_singular_expansion_recovers_coefficients():
    g = TimeGrid(1.0, 512)
    f = GridFn.from_callable(g, lambda t: 2.0 * t ** -0.4 - 3.0 * t ** 0.2 + 0.5 * t ** 0.8,
                             exponent=-0.4, step=0.6)
    lam, coef = singular_expansion(f)
    got = dict(zip(np.round(lam, 12), coef[:, 0]))
    assert got[-0.4] == pytest.approx(2.0, rel=1e-9)
    assert got[0.2] == pytest.approx(-3.0, rel=1e-9)
    assert got[0.8] == pytest.approx(0.5, rel=1e-7)


def test_semigroup_on_monomials():
    g = TimeGrid(1.0, 512)
    t = g.nodes
    f = GridFn(g, t ** 2)
    single = np.max(np.abs(frac_integral_left(0.7, f).values[:, 0] - monomial_integral(2, 0.7, t)))
    two = frac_integral_left(0.3, frac_integral_left(0.4, f)).values[:, 0]
    assert np.max(np.abs(two - monomial_integral(2, 0.7, t))) <= 5 * single


def test_e_alpha_property():
    A = np.array([[-0.5, 1.0], [-0.3, -0.2]])
    v = np.array([1.0, -0.5])
    for alpha in (0.4, 0.8):
        g = TimeGrid(1.0, 2048)
        f = GridFn.from_callable(g, lambda s: alpha_exp(alpha, A, s) @ v,
                                 exponent=alpha - 1.0, step=alpha)
        got = frac_integral_left(1.0 - alpha, f).values
        ref = ml_matrix(alpha, 1.0, A, g.nodes) @ v
        assert np.max(np.abs(got - ref)) <= 1e-5
        # value at the origin is v (limit)
        assert np.allclose(got[0], v, atol=1e-6)


@pytest.mark.parametrize("alpha", [0.3, 0.6])
def test_integration_by_parts(alpha):
    errs = []
    for N in (64, 128, 256, 512):
        g = TimeGrid(1.0, N)
        t = g.nodes
        left = GridFn(g, t * frac_integral_left(alpha, GridFn(g, np.ones_like(t))).values[:, 0])
        right = GridFn(g, frac_integral_right(alpha, GridFn(g, t)).values[:, 0])
        lhs = trapezoid(left, left_powers=(1 + alpha,))[0]
        rhs = trapezoid(right, right_powers=(alpha, 1 + alpha))[0]
        # int_0^1 t I^a 1 dt = (a + 1) / Gamma(a + 3)
        assert lhs == pytest.approx((alpha + 1) / math.gamma(alpha + 3), rel=1e-4)
        errs.append(abs(lhs - rhs))
    assert orders(errs).min() >= 1.5


def test_power_end_correction_removes_kink_error():
    for p in (0.3, 0.5, 0.7):
        N = 200
        h = 1.0 / N
        s = h * np.arange(N + 1)
        G = s ** p
        plain = h * (G.sum() - 0.5 * (G[0] + G[-1]))
        exact = 1.0 / (p + 1)
        corr = power_end_correction(G, h, [p])
        # the right end t = 1 is smooth; its trapezoid error is O(h^2)
        assert abs(plain - corr - exact) <= 2 * h ** 2 * p
        assert abs(plain - exact) > 10 * abs(plain - corr - exact)


# ---------------------------------------------------------------- derivatives


def test_gl_and_bdf2_weights():
    w = gl_weights(0.5, 6)
    assert w[0] == 1.0 and w[1] == -0.5
    assert np.allclose(gl_weights(1.0, 5), [1, -1, 0, 0, 0])
    assert np.allclose(bdf2_weights(1.0, 5), [1.5, -2.0, 0.5, 0, 0], atol=1e-15)
    # (3/2 - 2z + z^2/2)^a (3/2 - 2z + z^2/2)^b = (...)^(a+b)
    a, b = bdf2_weights(0.3, 20), bdf2_weights(0.6, 20)
    assert np.allclose(np.convolve(a, b)[:20], bdf2_weights(0.9, 20), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_derivative_inverts_integral_first_order(alpha):
    errs = []
    for N in (256, 512, 1024):
        g = TimeGrid(1.0, N)
        t = g.nodes
        D = rl_derivative(alpha, frac_integral_left(alpha, GridFn(g, np.sin(t))))
        assert D.exponent is None
        errs.append(np.max(np.abs(D.values[1:, 0] - np.sin(t[1:]))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert ratios.min() >= 1.8


def test_bdf2_is_second_order():
    errs = []
    for N in (256, 512, 1024):
        g = TimeGrid(1.0, N)
        t = g.nodes
        f = GridFn(g, t ** 4)
        D = rl_derivative(0.6, f, scheme="bdf2")
        errs.append(np.max(np.abs(D.values[:, 0] - monomial_integral(4, -0.6, t))))
    assert orders(errs).min() >= 1.9


def test_derivative_of_kernel_power_vanishes():
    g = TimeGrid(1.0, 512)
    for alpha in (0.3, 0.5, 0.8):
        f = GridFn.from_callable(g, lambda t: t ** (alpha - 1), exponent=alpha - 1, step=alpha)
        D = rl_derivative(alpha, f)
        assert np.nanmax(np.abs(D.values)) <= 1e-7


def test_derivative_of_e_alpha_is_A_e_alpha():
    A = np.array([[-0.5, 1.0], [-0.3, -0.2]])
    v = np.array([1.0, -0.5])
    alpha = 0.6
    errs = []
    for N in (512, 1024, 2048):
        g = TimeGrid(1.0, N)
        f = GridFn.from_callable(g, lambda s: alpha_exp(alpha, A, s) @ v,
                                 exponent=alpha - 1, step=alpha)
        D = rl_derivative(alpha, f)
        k = N // 8
        errs.append(np.max(np.abs(D.values[k:] - f.values[k:] @ A.T)))
    assert errs[-1] <= 1e-4
    assert errs[0] / errs[-1] >= 3.0


def test_derivative_flags_nonzero_origin():
    g = TimeGrid(1.0, 64)
    D = rl_derivative(0.4, GridFn(g, np.ones(65)))
    assert D.singular and D.exponent == pytest.approx(-0.4)
    with pytest.raises(DomainError):
        rl_derivative(1.5, GridFn(g, np.ones(65)))
    with pytest.raises(DomainError):
        rl_derivative(0.5, GridFn(g, np.ones(65)), scheme="spline")


def test_rl_compose():
    g = TimeGrid(1.0, 1024)
    t = g.nodes
    f = GridFn(g, t ** 3)
    assert rl_compose(0.5, 0, f) is f
    one = rl_compose(0.5, 1, f)
    assert np.array_equal(one.values, rl_derivative(0.5, f).values)
    two = rl_compose(0.5, 2, f, scheme="bdf2")
    # D^0.5 D^0.5 t^3 = 3 t^2
    assert np.max(np.abs(two.values[1:, 0] - 3 * t[1:] ** 2)) <= 1e-4
    with pytest.raises(DomainError):
        rl_compose(0.5, -1, f)


# ---------------------------------------------------------------- conv_singular


def test_conv_singular_matches_left_integral():
    g = TimeGrid(1.0, 256)
    f = GridFn(g, np.exp(-g.nodes))
    for alpha in (0.3, 0.9):
        a = conv_singular(SingularKernel.power(alpha), f).values
        b = frac_integral_left(alpha, f).values
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_conv_singular_kernel_examples():
    g = TimeGrid(1.0, 128)
    t = g.nodes
    for alpha, beta in ((0.5, 0.5), (0.3, 1.0)):
        order = Order(alpha, beta)
        K = SingularKernel(alpha + beta, lambda s: phi_beta(order, np.zeros((1, 1)), np.maximum(s, 1e-300))
                           * np.maximum(s, 1e-300)[:, None, None] ** (1 - alpha - beta))
        got = conv_singular(K, GridFn(g, np.full(129, 2.0))).values[:, 0]
        assert np.allclose(got, 2.0 * t ** (alpha + beta) / math.gamma(alpha + beta + 1), rtol=1e-12)

def test_conv_singular_nilpotent_example():
    # Phi_0.5 of the nilpotent example against B: (4 t^1.5 / (3 sqrt(pi)), t).
    # The smooth part carries sqrt(s), so the generic rule converges at order 1.5.
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    K = SingularKernel(1.0, lambda s: phi_beta(Order(0.5, 0.5), A, s))
    errs = []
    for N in (256, 1024, 4096):
        g = TimeGrid(1.0, N)
        t = g.nodes
        got = conv_singular(K, GridFn(g, np.tile([0.0, 1.0], (N + 1, 1)))).values
        ref = np.column_stack([4 * t ** 1.5 / (3 * math.sqrt(math.pi)), t])
        errs.append(np.max(np.abs(got - ref)))
    assert errs[-1] <= 1e-6
    assert np.log2(errs[0] / errs[-1]) / 2 >= 1.4


def test_conv_singular_is_linear():
    g = TimeGrid(1.0, 128)
    t = g.nodes
    K = SingularKernel(0.6, lambda s: np.cos(s)[:, None, None])
    f1, f2 = GridFn(g, np.sin(3 * t)), GridFn(g, t ** 2)
    lhs = conv_singular(K, GridFn(g, 2.0 * f1.values - 0.5 * f2.values)).values
    rhs = 2.0 * conv_singular(K, f1).values - 0.5 * conv_singular(K, f2).values
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_conv_singular_dimension_errors():
    g = TimeGrid(1.0, 16)
    K = SingularKernel(0.5, lambda s: np.ones((s.size, 2, 3)))
    with pytest.raises(DimensionError):
        conv_singular(K, GridFn(g, np.ones((17, 2))))


def test_graded_gauss_legendre():
    x, w = graded_gauss_legendre(2.0, 32, 8)
    assert np.all(np.diff(x) > 0) and x[0] > 0 and x[-1] < 2.0
    assert w.sum() == pytest.approx(2.0, rel=1e-14)
    # integrands smooth in a power of s are resolved
    for a in (0.3, 0.5):
        assert np.sum(w * x ** a) == pytest.approx(2.0 ** (a + 1) / (a + 1), rel=1e-10)
    x, w = graded_gauss_legendre(2.0)
    for a in (0.3, 0.5):
        assert np.sum(w * x ** a) == pytest.approx(2.0 ** (a + 1) / (a + 1), rel=1e-14)


def test_trapezoid_rejects_singular():
    g = TimeGrid(1.0, 16)
    with pytest.raises(DomainError):
        trapezoid(GridFn.from_callable(g, lambda t: t ** -0.5, exponent=-0.5))
