import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochfx.atlas import fix_smooth_gauge, interpolate_band, zak_phase
from blochfx.config import mathieu_spec
from blochfx.errors import CausticReached, NotApplicable
from blochfx.quantize import fit_slope
from blochfx.semiclassics import (BandFunctions, WKBInitial, accumulate_phases, hj_residual,
                                  integrate_flow, launch_fan, loop_action, synthesize_packet)
from blochfx.symbols import SymbolTable

# [DERIVED] Berry phase of the default packet center over s in [0, 1] in the default gauge
BERRY_DEFAULT = -0.9424537570383125


@pytest.fixture(scope="module")
def bare():
    return SymbolTable.from_spec(mathieu_spec())


@pytest.fixture(scope="module")
def dyn_bf(dynamics_table):
    return BandFunctions(dynamics_table)


def test_unperturbed_flow_is_straight(bare):
    tr = integrate_flow(bare, [0.3], [0.2], 2.0)
    v = interpolate_band(bare.gauge.atlas, np.array([[0.2]]), 1)[1][0, 0]
    assert np.allclose(tr.k[:, 0], 0.2, atol=1e-13)
    assert np.allclose(tr.y[:, 0], 0.3 + v * tr.s, atol=1e-10)
    assert abs(tr.berry[-1]) < 1e-13 and tr.rw[-1] == 0


def test_energy_and_step_halving(dynamics_table, dyn_bf):
    tr = integrate_flow(dynamics_table, [1.0], [0.1], 3.0, bf=dyn_bf)
    assert tr.energy_drift <= 1e-10
    fine = integrate_flow(dynamics_table, [1.0], [0.1], 3.0, tol_scale=0.1, bf=dyn_bf)
    assert abs(tr.y[-1, 0] - fine.y[-1, 0]) <= 1e-9
    assert abs(tr.berry[-1] - fine.berry[-1]) <= 1e-9


def test_rw_vanishes_in_1d(dynamics_table, dyn_bf):
    tr = integrate_flow(dynamics_table, [2.0], [-0.3], 1.0, bf=dyn_bf)
    assert np.all(tr.rw == 0)


def test_flow_2d(table_2d):
    tr = integrate_flow(table_2d, [1.0, 2.0], [0.2, -0.1], 1.0)
    assert tr.energy_drift <= 1e-10
    assert abs(tr.rw[-1]) > 1e-2  # orbital magnetization couples to the field
    assert tr.y.shape == (201, 2)


def test_berry_phase_frozen(dynamics_table, dyn_bf):
    init = WKBInitial()
    tr = integrate_flow(dynamics_table, [init.center], [init.k0], 1.0, bf=dyn_bf)
    assert tr.berry[-1] == pytest.approx(BERRY_DEFAULT, abs=1e-8)
    ph = accumulate_phases(dynamics_table, tr, 1 / 16)
    assert ph.berry == tr.berry[-1]
    assert ph.total == pytest.approx(ph.action - ph.dynamical + ph.berry, abs=1e-12)


def test_berry_phase_regauge(dynamics_table):
    twisted = SymbolTable(fix_smooth_gauge(dynamics_table.gauge.atlas, twist=0.4))
    init = WKBInitial()
    a = integrate_flow(dynamics_table, [init.center], [init.k0], 1.0)
    b = integrate_flow(twisted, [init.center], [init.k0], 1.0)
    chi = lambda k: twisted.gauge._twist(np.array([[k]]))[0][0]
    # open paths pick up the endpoint difference of the gauge phase
    assert b.berry[-1] - a.berry[-1] == pytest.approx(-(chi(a.k[-1, 0]) - chi(a.k[0, 0])), abs=1e-8)


def test_closed_loop_berry_gauge_invariant(dynamics_table):
    # the narrow band barely moves y, so the force from W sweeps k through a full period
    from scipy.optimize import brentq

    twisted = SymbolTable(fix_smooth_gauge(dynamics_table.gauge.atlas, twist=0.4))
    y0 = np.pi / 2
    a = integrate_flow(dynamics_table, [y0], [0.0], 10.0)
    g = dynamics_table.spec.lattice.dual_lengths[0]
    idx = np.flatnonzero(np.abs(a.k[:, 0]) >= g)
    assert len(idx) > 0
    s_loop = brentq(lambda s: abs(a.at(s)[1][0]) - g, a.s[idx[0] - 1], a.s[idx[0]])
    pa = integrate_flow(dynamics_table, [y0], [0.0], s_loop).berry[-1]
    pb = integrate_flow(twisted, [y0], [0.0], s_loop).berry[-1]
    # a full sweep of the zone accumulates the Zak phase
    assert abs(np.angle(np.exp(1j * (pa - zak_phase(dynamics_table.gauge.atlas))))) <= 1e-8
    assert abs(np.angle(np.exp(1j * (pa - pb)))) <= 1e-7


def test_corrected_flow_distance(dynamics_table, dyn_bf):
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    a = integrate_flow(dynamics_table, [1.0], [0.1], 1.0, bf=dyn_bf)
    dist = []
    for e in eps:
        b = integrate_flow(dynamics_table, [1.0], [0.1], 1.0, variant="corrected", eps=e, bf=dyn_bf)
        dist.append(np.hypot(*(a.y[-1] - b.y[-1]), *(a.k[-1] - b.k[-1])))
    assert fit_slope(eps, dist)[0] >= 0.9
    with pytest.raises(ValueError):
        integrate_flow(dynamics_table, [1.0], [0.1], 1.0, variant="corrected", bf=dyn_bf)
    with pytest.raises(ValueError):
        integrate_flow(dynamics_table, [1.0], [0.1], 1.0, variant="exact", eps=0.1, bf=dyn_bf)


def test_synthesis_at_zero_time(dynamics_table, dyn_bf):
    init = WKBInitial()
    eps = 1 / 16
    syn = synthesize_packet(dynamics_table, init, 0.0, eps, bf=dyn_bf)
    y = eps * syn.x
    yq = init.center + np.mod(y - init.center + np.pi, 2 * np.pi) - np.pi
    fd = dynamics_table.gauge.evaluate(np.full((len(y), 1), init.k0))
    n = dynamics_table.spec.nx
    bloch = fd.psi[np.arange(len(y)), np.arange(len(y)) % n]
    # at s = 0 the chirp-free phase is linear, so the Taylor correction is exact
    ref = np.exp(1j * init.phi(yq)[0] / eps) * init.f0(yq) * bloch
    mask = init.f0(yq) > 1e-12
    assert np.max(np.abs(syn.psi[mask] - ref[mask])) <= 1e-10
    assert syn.density_center == pytest.approx(init.center, abs=1e-3)


def test_amplitude_and_hj(dynamics_table, dyn_bf):
    init = WKBInitial()
    syn = synthesize_packet(dynamics_table, init, 1.0, 1 / 32, bf=dyn_bf)
    assert syn.amplitude_gap <= 1e-8
    assert syn.berry_center == pytest.approx(BERRY_DEFAULT, abs=1e-8)
    assert np.all(np.isfinite(syn.psi))
    assert hj_residual(dynamics_table, init, 0.5, bf=dyn_bf) <= 1e-6


def test_loop_action_preserved(dynamics_table, dyn_bf):
    before, after = loop_action(dynamics_table, 1.0, 0.2, 0.1, 5.0, n=32, bf=dyn_bf)
    assert before == pytest.approx(-np.pi * 0.01, rel=1e-12)
    assert abs(after - before) <= 1e-6


def test_caustic_detected(dynamics_table, dyn_bf):
    with pytest.raises(CausticReached):
        synthesize_packet(dynamics_table, WKBInitial(chirp=10.0), 1.0, 1 / 16, bf=dyn_bf)
    with pytest.raises(CausticReached):
        launch_fan(dynamics_table, WKBInitial(chirp=-20.0), np.linspace(-1.6, 4.7, 33), 1.0, dyn_bf)


def test_synthesis_1d_only(table_2d):
    with pytest.raises(NotApplicable):
        synthesize_packet(table_2d, WKBInitial(), 0.5, 1 / 8)


@settings(max_examples=10, deadline=None)
@given(y0=st.floats(0, 2 * np.pi), k0=st.floats(-0.5, 0.5), m=st.integers(-2, 2))
def test_flow_periodic_in_k(dynamics_table, y0, k0, m):
    bf = BandFunctions(dynamics_table) if not hasattr(test_flow_periodic_in_k, "bf") else None
    bf = bf or test_flow_periodic_in_k.bf
    test_flow_periodic_in_k.bf = bf
    g = dynamics_table.spec.lattice.dual_lengths[0]
    a = integrate_flow(dynamics_table, [y0], [k0], 0.5, n_out=2, bf=bf)
    b = integrate_flow(dynamics_table, [y0], [k0 + m * g], 0.5, n_out=2, bf=bf)
    assert abs(a.y[-1, 0] - b.y[-1, 0]) <= 1e-9
    assert abs(a.k[-1, 0] + m * g - b.k[-1, 0]) <= 1e-9
