import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from halfwave import spectral as S
from halfwave.spectral import GridError, SpectralError, make_grid

PROP = settings(max_examples=25, deadline=None)


def smooth_field(grid, seed, complex_=False):
    """Random band-limited field with Gaussian envelope."""
    rng = np.random.default_rng(seed)
    x1, x2 = grid.coords
    f = np.zeros_like(x1)
    for _ in range(4):
        c = rng.uniform(-2, 2, 2)
        w = rng.uniform(0.8, 2.0)
        f = f + rng.normal() * np.exp(-((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2) / w ** 2)
    if complex_:
        f = f + 1j * smooth_field(grid, seed + 1)
    return f


def test_grid_validation():
    for bad in [(8.0, 100), (8.0, 8), (-1.0, 64)]:
        with pytest.raises(GridError):
            make_grid(*bad)
    with pytest.raises(GridError):
        make_grid(8.0, 64, seam=0.7)
    g = make_grid(8.0, 64)
    assert g.dx == pytest.approx(0.25)
    assert g.k_max == pytest.approx(np.pi / g.dx)
    with pytest.raises(GridError):
        g.check(np.zeros((32, 32)))


def _bessel_half_derivative(r):
    # D^{1/2} exp(-|x|^2) as a Hankel integral, F(k) = exp(-k^2/4)/2
    f = lambda k: 0.5 * k ** 1.5 * np.exp(-k * k / 4) * special.j0(k * r)
    return integrate.quad(f, 0, 40, limit=400, epsabs=1e-13)[0]


def test_half_derivative_of_gaussian_matches_hankel_quadrature():
    # the periodic images of the |x|^{-5/2} tail shift the torus result by a
    # near-constant offset of size L^{-5/2}; the shape must match the quadrature
    offsets = []
    for L, N in [(8.0, 128), (16.0, 256)]:
        g = make_grid(L, N)
        d = S.dfrac(np.exp(-g.r ** 2), g, 0.5)
        i0 = g.N // 2
        js = [int(round(r / g.dx)) for r in (0.0, 0.5, 1.0, 2.0)]
        err = [d[i0 + j, i0] - _bessel_half_derivative(abs(g.x[i0 + j])) for j in js]
        offsets.append(err[0])
        assert max(abs(e - err[0]) for e in err) < 0.015 * abs(err[0])
    assert offsets[0] / offsets[1] == pytest.approx(2 ** 2.5, rel=0.02)


def test_D_of_plane_wave_is_modulus_of_wavevector():
    g = make_grid(4.0, 64)
    x1, x2 = g.coords
    k = (3 * np.pi / g.L, -5 * np.pi / g.L)
    f = np.exp(1j * (k[0] * x1 + k[1] * x2))
    assert np.allclose(S.dfrac(f, g, 1.0), np.hypot(*k) * f, atol=1e-11)


def test_negative_power_needs_zero_mean():
    g = make_grid(4.0, 32)
    with pytest.raises(SpectralError):
        S.dfrac(np.ones((32, 32)), g, -1.0)


def test_lambda_squared_matches_symbolic():
    x, y = sp.symbols("x y", real=True)
    f = (1 + x - y ** 2 / 2) * sp.exp(-(x ** 2 + 2 * y ** 2))
    lam = lambda h: h + x * sp.diff(h, x) + y * sp.diff(h, y)
    ref = sp.lambdify((x, y), lam(lam(f)), "numpy")
    g = make_grid(8.0, 128)
    x1, x2 = g.coords
    F = sp.lambdify((x, y), f, "numpy")(x1, x2)
    got = S.lambda_op(F, g, iterate=2)
    inner = (np.abs(x1) < 4) & (np.abs(x2) < 4)
    assert np.max(np.abs(got - ref(x1, x2))[inner]) < 1e-9
    raw = S.lambda_op(F, g, iterate=2, periodic=False)
    assert np.max(np.abs(raw - ref(x1, x2))[inner]) < 1e-9


@PROP
@given(st.integers(0, 10 ** 6))
def test_lambda_is_skew_adjoint(seed):
    g = make_grid(6.0, 64)
    f = smooth_field(g, seed)
    h = smooth_field(g, seed + 7)
    lhs = S.inner(S.lambda_op(f, g), h, g)
    rhs = -S.inner(f, S.lambda_op(h, g), g)
    assert abs(lhs - rhs) <= 1e-8 * S.norm(f, g) * S.norm(h, g)


@PROP
@given(st.integers(0, 10 ** 6))
def test_D_symmetric_and_nonnegative(seed):
    g = make_grid(6.0, 64)
    f = smooth_field(g, seed)
    h = smooth_field(g, seed + 3)
    assert S.inner(S.dfrac(f, g), h, g) == pytest.approx(S.inner(f, S.dfrac(h, g), g), abs=1e-10)
    assert S.inner(S.dfrac(f, g), f, g) >= -1e-12


@PROP
@given(st.integers(0, 10 ** 6), st.sampled_from([(1, 1), (-1, 1), (1, -1), (-1, -1)]))
def test_parity_projection_idempotent(seed, signs):
    g = make_grid(6.0, 64)
    f = smooth_field(g, seed)
    p = S.parity_project(f, signs)
    assert np.allclose(S.parity_project(p, signs), p)
    assert np.allclose(S.reflect(p, 0), signs[0] * p)


@PROP
@given(st.integers(0, 10 ** 6))
def test_symmetrize8_idempotent_and_invariant(seed):
    g = make_grid(6.0, 64)
    s8 = S.symmetrize8(smooth_field(g, seed))
    assert np.allclose(S.symmetrize8(s8), s8)
    assert np.allclose(s8, s8.T)


@PROP
@given(st.floats(0, 2 * np.pi), st.integers(0, 10 ** 6))
def test_functionals_phase_invariant(theta, seed):
    g = make_grid(6.0, 64)
    u = smooth_field(g, seed, complex_=True)
    a = S.functionals(u, g)
    b = S.functionals(np.exp(1j * theta) * u, g)
    assert b.mass == pytest.approx(a.mass, rel=1e-12)
    assert b.energy == pytest.approx(a.energy, rel=1e-10, abs=1e-12)
    assert np.allclose(b.momentum, a.momentum, atol=1e-10)


def test_momentum_of_boost():
    # P(e^{i v.x} f) = P(f) + v M(f) for real f, v on the lattice
    g = make_grid(8.0, 128)
    f = np.exp(-g.r ** 2)
    v = np.array([2 * np.pi / g.L, -np.pi / g.L])
    x1, x2 = g.coords
    u = f * np.exp(1j * (v[0] * x1 + v[1] * x2))
    t = S.functionals(u, g)
    assert np.allclose(t.momentum, v * t.mass, rtol=1e-10)


def test_resample_on_grid_points_is_identity():
    g = make_grid(6.0, 64)
    f = smooth_field(g, 5, complex_=True)
    assert np.allclose(S.resample(f, g, g.x, g.x), f, atol=1e-11)


def test_resample_matches_analytic_gaussian_off_grid():
    g = make_grid(8.0, 128)
    f = np.exp(-g.r ** 2)
    p1 = 0.7 * make_grid(4.0, 32).x + 0.13
    p2 = 0.9 * make_grid(4.0, 32).x - 0.2
    exact = np.exp(-(p1[:, None] ** 2 + p2[None, :] ** 2))
    assert np.allclose(S.resample(f, g, p1, p2), exact, atol=1e-10)


def test_edge_decay_assertion():
    g = make_grid(8.0, 64)
    S.assert_edge_decay(np.exp(-g.r ** 2), 1e-8)
    with pytest.raises(SpectralError):
        S.assert_edge_decay(1.0 / (1.0 + g.r ** 2) ** 1.5, 1e-8)


def test_dealias_removes_top_third():
    g = make_grid(4.0, 32)
    x1, _ = g.coords
    hi = np.cos(14 * np.pi / g.L * x1)
    lo = np.cos(3 * np.pi / g.L * x1)
    assert np.allclose(S.dealias(hi + lo, g), lo, atol=1e-12)
