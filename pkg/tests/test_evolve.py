import csv

import numpy as np
import pytest

from halfwave.evolve import (
    IntegrationError,
    Schedule,
    advance,
    conservation_observer,
    linear_substep,
    nonlinear_substep,
    run,
    step,
    write_csv,
)
from halfwave.spectral import functionals, make_grid, norm


def blob(grid):
    x1, x2 = grid.coords
    return 1.5 * np.exp(-(x1 ** 2 + 1.5 * x2 ** 2) / 2) * np.exp(0.3j * x1)


@pytest.fixture(scope="module")
def g():
    return make_grid(8.0, 128)


def test_mass_conserved_over_thousand_steps(g):
    u = blob(g)
    m0 = functionals(u, g).mass
    for _ in range(1000):
        u = step(u, g, 0.01)
    assert abs(functionals(u, g).mass - m0) <= 1e-10 * m0


def test_time_reversal_round_trip(g):
    u0 = blob(g)
    for dt in (0.01, 0.1):
        u = step(step(u0, g, dt), g, -dt)
        assert norm(u - u0, g) <= 1e-10 * norm(u0, g)


def test_long_reversal_without_projection(g):
    # the 2/3 projection is not invertible, so the long horizon check runs undealiased
    u0 = blob(g)
    u = u0
    for _ in range(200):
        u = step(u, g, 0.01, dealias_on=False)
    for _ in range(200):
        u = step(u, g, -0.01, dealias_on=False)
    assert norm(u - u0, g) <= 1e-10 * norm(u0, g)


def _energy_drift(g, dt, T, scheme):
    u = blob(g)
    e0 = functionals(u, g).energy
    for _ in range(int(round(T / dt))):
        u = advance(u, g, dt, scheme)
    return abs(functionals(u, g).energy - e0)


def test_strang_energy_order(g):
    dts = [0.04, 0.02, 0.01]
    d = [_energy_drift(g, dt, 0.8, "strang") for dt in dts]
    order = np.polyfit(np.log(dts), np.log(d), 1)[0]
    assert 1.8 <= order <= 2.2


def test_yoshida_is_fourth_order(g):
    dts = [0.08, 0.04]
    d = [_energy_drift(g, dt, 0.8, "yoshida4") for dt in dts]
    assert np.log2(d[0] / d[1]) > 3.5


def test_linear_flow_plane_wave(g):
    x1, x2 = g.coords
    k = np.array([3, -2]) * np.pi / g.L
    u = np.exp(1j * (k[0] * x1 + k[1] * x2))
    t = 0.37
    got = step(u, g, t, dealias_on=False, nonlinear=False)
    assert np.allclose(got, u * np.exp(-1j * np.hypot(*k) * t), atol=1e-12)
    assert np.allclose(linear_substep(u, g, t), got, atol=1e-12)


def test_nonlinear_substep_exact():
    u = np.array([1.0 + 1.0j, 2.0, -0.5j])
    out = nonlinear_substep(u, 0.3)
    assert np.allclose(np.abs(out), np.abs(u))
    assert np.allclose(out, u * np.exp(1j * np.abs(u) * 0.3))


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(0.0, 0.0, dt=0.1)
    with pytest.raises(ValueError):
        Schedule(0.0, 1.0)
    with pytest.raises(ValueError):
        Schedule(0.0, 1.0, dt=0.1, c_adaptive=0.1)
    with pytest.raises(ValueError):
        Schedule(0.0, 1.0, dt=0.1, scheme="euler")


def test_run_hits_end_and_records(g, tmp_path):
    tr = run(blob(g), g, Schedule(0.0, 0.25, dt=0.01, checkpoint_stride=5), [conservation_observer(g)])
    assert tr.halt_reason == "reached t_end"
    assert tr.t_final == pytest.approx(0.25)
    assert tr.times[0] == 0.0 and len(tr.times) == 6
    p = tmp_path / "c.csv"
    write_csv(p, tr)
    rows = list(csv.DictReader(p.open()))
    assert len(rows) == 6 and float(rows[-1]["t"]) == pytest.approx(0.25)


def test_observer_halt_and_lambda_floor(g):
    calls = []

    def obs(i, t, u):
        calls.append(t)
        return {"lam": 1.0 - t}

    tr = run(blob(g), g, Schedule(0.0, 1.0, c_adaptive=0.05, checkpoint_stride=1), [obs], lam_min=0.8)
    assert "floor" in tr.halt_reason
    tr = run(blob(g), g, Schedule(0.0, 1.0, dt=0.1), [lambda i, t, u: {"halt": "stop"}])
    assert tr.halt_reason == "stop" and tr.steps == 0


def test_nonfinite_raises_with_last_good(g):
    u = blob(g)
    u[0, 0] = np.nan
    with pytest.raises(IntegrationError):
        run(u, g, Schedule(0.0, 1.0, dt=0.1))

    def poison(i, t, v):
        if i == 2:
            v[0, 0] = np.inf
    with pytest.raises(IntegrationError) as err:
        run(blob(g), g, Schedule(0.0, 1.0, dt=0.01, checkpoint_stride=2), [poison])
    assert err.value.last_good is not None
