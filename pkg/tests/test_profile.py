import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halfwave.linops import Side, apply_L
from halfwave.profile import (
    GateError,
    ProfileParams,
    assemble_profile,
    combine,
    loglog_slope,
    monomial,
    profile_derivatives,
    profile_residual,
    t20_rhs,
)
from halfwave.spectral import inner, lambda_op, norm, partial, reflect


def test_defining_equations(small_ps):
    ps = small_ps
    g = ps.grid
    gs = ps.gs
    LQ = lambda_op(ps.Q, g)

    def rel(lhs, rhs):
        return norm(lhs - rhs, g) / norm(rhs, g)

    assert rel(apply_L(Side.MINUS, ps.S10, gs), LQ) < 1e-9
    for j in (0, 1):
        assert rel(apply_L(Side.MINUS, ps.S01[j], gs), -partial(ps.Q, g, j)) < 1e-9
        rhs = partial(ps.S01[j], g, j) + 0.5 * ps.S01[j] ** 2
        assert rel(apply_L(Side.PLUS, ps.T02[j], gs), rhs) < 1e-3  # up to the kernel component
    assert rel(apply_L(Side.PLUS, ps.T20, gs), t20_rhs(ps.S10, g, ps.t20_form)) < 1e-3


@pytest.mark.parametrize("name,signs", [
    ("S10", (1, 1)), ("T20", (1, 1)), ("S01_1", (-1, 1)), ("S01_2", (1, -1)),
    ("T11_1", (-1, 1)), ("T11_2", (1, -1)), ("T02_1", (1, 1)), ("S21_1", (-1, 1)),
])
def test_symmetry_table(small_ps, name, signs):
    f = small_ps.fields()[name]
    assert np.allclose(reflect(f, 0), signs[0] * f, atol=1e-12 * np.abs(f).max())
    assert np.allclose(reflect(f, 1), signs[1] * f, atol=1e-12 * np.abs(f).max())


def test_axis_swap_relates_directions(small_ps):
    f = small_ps.fields()
    for a, b in [("S01_1", "S01_2"), ("T11_1", "T11_2"), ("T02_1", "T02_2"), ("S21_1", "S21_2")]:
        assert np.allclose(f[a].T, f[b], atol=1e-10 * np.abs(f[a]).max())


def test_selected_t20_form_and_constants(small_ps):
    ps = small_ps
    assert ps.t20_form == "minus"
    assert ps.pairings["mass_identity[plus]"] > 1.0
    assert ps.pairings["mass_identity[minus]"] < 0.1
    # two routes to e1: (Lambda Q, S10)/2 and (L- S10, S10)/2
    alt = 0.5 * inner(apply_L(Side.MINUS, ps.S10, ps.gs), ps.S10, ps.grid)
    assert ps.e1 == pytest.approx(alt, rel=1e-9)
    # regression at L=8, N=256
    assert ps.e1 == pytest.approx(0.9775029123408323, rel=1e-8)
    assert ps.p1 == pytest.approx(28.300701614412382, rel=1e-8)


def test_gate():
    with pytest.raises(GateError):
        ProfileParams(0.4, (0.0, 0.0)).check_gate(0.1)
    ProfileParams(0.3, (0.0, 0.0)).check_gate(0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05),
       st.sampled_from([(2, 1, 0), (1, 0, 1), (0, 2, 0), (3, 0, 0), (0, 0, 0)]),
       st.sampled_from(["a", "b1", "b2"]))
def test_monomial_derivative_matches_difference(a, b1, b2, powers, d):
    h = 1e-6
    idx = {"a": 0, "b1": 1, "b2": 2}[d]
    v = np.array([a, b1, b2])
    vp, vm = v.copy(), v.copy()
    vp[idx] += h
    vm[idx] -= h
    mk = lambda w: monomial(ProfileParams(w[0], (w[1], w[2])), powers)
    fd = (mk(vp) - mk(vm)) / (2 * h)
    assert monomial(ProfileParams(a, (b1, b2)), powers, d) == pytest.approx(fd, abs=1e-8)


def test_profile_derivatives_match_difference(small_ps):
    P = ProfileParams(0.15, (0.01, -0.02))
    da, db1, _ = profile_derivatives(small_ps, P)
    h = 1e-6
    fd = (assemble_profile(small_ps, ProfileParams(P.a + h, P.b))
          - assemble_profile(small_ps, ProfileParams(P.a - h, P.b))) / (2 * h)
    assert np.allclose(da, fd, atol=1e-6)
    fd = (assemble_profile(small_ps, ProfileParams(P.a, (P.b[0] + h, P.b[1])))
          - assemble_profile(small_ps, ProfileParams(P.a, (P.b[0] - h, P.b[1])))) / (2 * h)
    assert np.allclose(db1, fd, atol=1e-6)


def test_residual_scaling_small_box(small_ps):
    a_vals = [0.08, 0.04, 0.02]
    ra = [profile_residual(small_ps, ProfileParams(a, (0.0, 0.0))).l2_norm for a in a_vals]
    assert loglog_slope(a_vals, ra) >= 2.7
    b_vals = [0.02, 0.01, 0.005]
    rb = [profile_residual(small_ps, ProfileParams(0.0, (b, 0.0))).l2_norm for b in b_vals]
    assert loglog_slope(b_vals, rb) >= 2.5


def test_residual_at_zero_is_ground_state_residual(small_ps):
    r = profile_residual(small_ps, ProfileParams())
    assert r.l2_norm <= 1e-9 * norm(small_ps.Q, small_ps.grid)


def test_extra_fields_hook(small_ps):
    P = ProfileParams(0.1, (0.0, 0.0))
    base = assemble_profile(small_ps, P)
    bump = np.exp(-small_ps.grid.r ** 2) + 0j
    small_ps.extra[(3, 0, 0)] = bump
    try:
        assert np.allclose(assemble_profile(small_ps, P) - base, 1e-3 * bump)
    finally:
        small_ps.extra.clear()


def test_combine_without_terms_is_zero(small_ps):
    f = small_ps.fields()
    out = combine(f, ProfileParams(), "b1")
    assert out.shape == f["Q"].shape
    assert np.allclose(out, 1j * f["S01_1"])


def test_loglog_slope_exact():
    x = np.array([1.0, 2.0, 4.0])
    assert loglog_slope(x, 3 * x ** 2.5) == pytest.approx(2.5)
