import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochfx.acceptance import magnetic_2d_model
from blochfx.atlas import build_band_atlas, fix_smooth_gauge, interpolate_band
from blochfx.config import mathieu_spec
from blochfx.errors import NonOrthogonalRHS
from blochfx.symbols import (F0, F1, PhaseSpacePoint, SymbolTable, a1, angular_momentum,
                             angular_momentum_L, angular_momentum_sum_over_states,
                             corrector_equation_residual, fredholm_residual, fredholm_solve, h0,
                             h1, h1_explicit, reduced_resolvent)


def _points(spec, n, seed):
    rng = np.random.default_rng(seed)
    d = spec.dimension
    return rng.uniform(0, 2 * np.pi, (n, d)), rng.uniform(-0.5, 0.5, (n, d)) * spec.lattice.dual_lengths


def _ip(sd, a, b):
    return sd.fiber.resolvent.weight * np.sum(np.conj(a) * b, axis=-1)


@pytest.fixture(scope="module")
def bare_table():
    return SymbolTable.from_spec(mathieu_spec())


@pytest.fixture(scope="module")
def constant_A_table():
    return SymbolTable.from_spec(mathieu_spec(A_const=0.3))


@pytest.fixture(scope="module")
def W_only_table():
    return SymbolTable.from_spec(mathieu_spec(W_amp=0.3))


def test_h0_reduces_to_band(bare_table):
    y, k = _points(bare_table.spec, 10, 1)
    sd = bare_table.evaluate(y, k)
    assert np.allclose(sd.h0, interpolate_band(bare_table.gauge.atlas, k)[0], atol=1e-12)


def test_h0_substitution(constant_A_table):
    W = 0.0
    sd = constant_A_table.evaluate(np.array([[1.0], [2.5]]), np.zeros((2, 1)))
    E = interpolate_band(constant_A_table.gauge.atlas, np.array([[0.3]]))[0][0]
    assert np.allclose(sd.h0, E + W, atol=1e-12)


def test_h0_periodic_in_k(fredholm_table):
    y, k = _points(fredholm_table.spec, 10, 2)
    a = fredholm_table.evaluate(y, k, order=0).h0
    b = fredholm_table.evaluate(y, k + 1.0, order=0).h0
    assert np.allclose(a, b, atol=1e-9)


def test_zero_perturbation_gives_zero_corrections(bare_table):
    y, k = _points(bare_table.spec, 8, 3)
    sd = bare_table.evaluate(y, k, explicit=True)
    assert np.max(np.abs(sd.h1)) < 1e-12
    assert np.max(np.abs(sd.h1_explicit)) < 1e-12
    assert np.max(np.abs(sd.a1)) == 0.0
    assert np.max(np.abs(sd.F1)) < 1e-12


def test_F0_normalized(fredholm_table):
    y, k = _points(fredholm_table.spec, 20, 4)
    sd = fredholm_table.evaluate(y, k)
    assert np.allclose(_ip(sd, sd.F0, sd.F0), 1, atol=1e-10)


def test_fredholm_and_corrector(fredholm_table):
    y, k = _points(fredholm_table.spec, 50, 5)
    sd = fredholm_table.evaluate(y, k)
    assert np.max(fredholm_residual(sd)) <= 1e-8
    assert np.max(corrector_equation_residual(sd)) <= 1e-7


def test_a1_real_and_F1_component(residual_table):
    y, k = _points(residual_table.spec, 30, 6)
    sd = residual_table.evaluate(y, k)
    assert sd.a1.dtype.kind == "f"
    assert np.max(np.abs(sd.a1)) > 1e-3  # nontrivial with the gauge twist
    c = _ip(sd, sd.F0, sd.F1)
    assert np.max(np.abs(c.imag)) < 1e-10
    assert np.allclose(c.real, sd.a1, atol=1e-10)


@pytest.mark.parametrize("name", ["fredholm_table", "W_only_table"])
def test_route_equality_1d(name, request):
    table = request.getfixturevalue(name)
    y, k = _points(table.spec, 50, 7)
    sd = table.evaluate(y, k, explicit=True)
    assert np.max(np.abs(sd.h1 - sd.h1_explicit) / (1 + np.abs(sd.h1))) <= 1e-5


def test_route_equality_2d(table_2d):
    y, k = _points(table_2d.spec, 12, 8)
    sd = table_2d.evaluate(y, k, explicit=True)
    assert np.max(np.abs(sd.L3 * sd.B3)) > 1e-3  # the magnetic term is exercised
    assert np.max(np.abs(sd.h1 - sd.h1_explicit) / (1 + np.abs(sd.h1))) <= 1e-5


def test_constant_A_real_h1(constant_A_table):
    y, k = _points(constant_A_table.spec, 20, 9)
    sd = constant_A_table.evaluate(y, k)
    assert np.max(np.abs(sd.h1.imag)) < 1e-8
    # Hellmann-Feynman reduction: <F0, H1 F0> vanishes for constant A, W = 0
    assert np.max(np.abs(_ip(sd, sd.F0, sd.H1F0))) < 1e-8


def test_reality_split(fredholm_table, table_2d):
    for table in (fredholm_table, table_2d):
        y, k = _points(table.spec, 10, 10)
        sd = table.evaluate(y, k)
        div = np.einsum("bjl,bjl->b", sd.fiber.hessE, sd.slow.dA) / 2j
        assert np.max(np.abs((sd.h1 - div).imag)) < 1e-6


def test_angular_momentum_1d_zero(fredholm_table):
    p = PhaseSpacePoint((0.4,), (0.1,))
    assert np.array_equal(angular_momentum_L(fredholm_table, p), np.zeros(3))


def test_angular_momentum_sum_over_states(table_2d):
    k = np.random.default_rng(11).uniform(-3, 3, (4, 2))
    fd = table_2d.gauge.evaluate(k, need_spectrum=True)
    L = angular_momentum(fd)
    ref = angular_momentum_sum_over_states(fd, table_2d.spec.band)
    assert np.max(np.abs(L - ref) / np.abs(ref)) <= 1e-5


@pytest.fixture(scope="module")
def twisted_2d(table_2d):
    return SymbolTable(fix_smooth_gauge(table_2d.gauge.atlas, twist=0.35))


def _covariance_gap(a, b):
    # a phase change in the kinetic momentum shifts h1 by the connection change along the flow
    kt_dot = np.einsum("bjl,bl->bj", a.slow.dA, a.dh0_dk) - a.dh0_dy
    shift = np.sum((b.fiber.beta - a.fiber.beta) * kt_dot, axis=-1)
    return np.max(np.abs(b.h1 - a.h1 - shift))


def test_gauge_covariance_2d(table_2d, twisted_2d):
    y, k = _points(table_2d.spec, 6, 12)
    a = table_2d.evaluate(y, k)
    b = twisted_2d.evaluate(y, k)
    assert np.allclose(a.h0, b.h0, atol=1e-10)
    assert np.allclose(a.L3, b.L3, atol=1e-8)
    assert np.allclose(a.h1.imag, b.h1.imag, atol=1e-8)
    assert np.max(np.abs(b.fiber.beta - a.fiber.beta)) > 1e-2
    assert _covariance_gap(a, b) < 1e-7


def test_gauge_covariance_1d(fredholm_table):
    other = SymbolTable(fix_smooth_gauge(fredholm_table.gauge.atlas, twist=-0.6))
    y, k = _points(fredholm_table.spec, 10, 13)
    a, b = fredholm_table.evaluate(y, k), other.evaluate(y, k)
    assert np.allclose(a.h0, b.h0, atol=1e-12)
    assert _covariance_gap(a, b) < 1e-8
    # the twist only rephases the Bloch function
    fa = np.abs(a.F0), np.abs(b.F0)
    assert np.allclose(*fa, atol=1e-10)


def test_fredholm_solve_contract(fredholm_table):
    sd = fredholm_table.evaluate(np.array([[0.7]]), np.array([[0.2]]))
    rr = sd.fiber.resolvent
    n = sd.F0.shape[1]
    assert np.all(fredholm_solve(rr, np.zeros(n)) == 0)
    with pytest.raises(NonOrthogonalRHS):
        fredholm_solve(rr, sd.F0[0])
    rng = np.random.default_rng(14)
    r = rr.project((rng.normal(size=n) + 1j * rng.normal(size=n))[None])[0]
    x = fredholm_solve(rr, r)
    assert np.sqrt(rr.weight) * np.linalg.norm(rr.apply_M(x[None])[0] - r) <= 1e-8
    assert abs(rr.weight * np.vdot(sd.F0[0], x)) <= 1e-10


def test_pointwise_api(fredholm_table):
    p = PhaseSpacePoint((1.3,), (-0.2,))
    sd = fredholm_table.evaluate([[1.3]], [[-0.2]], explicit=True)
    assert h0(fredholm_table, p) == pytest.approx(sd.h0[0], abs=1e-14)
    assert h1(fredholm_table, p) == pytest.approx(sd.h1[0], abs=1e-14)
    assert h1(fredholm_table, p, "explicit") == pytest.approx(sd.h1_explicit[0], abs=1e-14)
    assert np.allclose(F0(fredholm_table, p), sd.F0[0])
    assert np.allclose(F1(fredholm_table, p), sd.F1[0])
    assert a1(fredholm_table, p) == pytest.approx(sd.a1[0])
    assert reduced_resolvent(fredholm_table, p).E[0] == pytest.approx(sd.fiber.E[0])
    with pytest.raises(ValueError):
        h1(fredholm_table, p, "bogus")


def test_check_routes_flag():
    table = SymbolTable.from_spec(mathieu_spec(W_amp=0.2, A_amp=0.1, nk=16), check_routes=True)
    sd = table.evaluate(*_points(table.spec, 5, 15))
    assert sd.h1_explicit is not None


@settings(max_examples=15, deadline=None)
@given(y=st.floats(0, 2 * np.pi), k=st.floats(-0.5, 0.5))
def test_symbols_property(fredholm_table, y, k):
    sd = fredholm_table.evaluate([[y]], [[k]], explicit=True)
    assert abs(sd.h1[0] - sd.h1_explicit[0]) <= 1e-5 * (1 + abs(sd.h1[0]))
    assert fredholm_residual(sd)[0] <= 1e-8
    assert np.isrealobj(sd.a1)
    # explicit divergence term carries all of Im h1
    assert abs(sd.h1[0].imag - np.sum(sd.fiber.hessE * sd.slow.dA) / -2) < 1e-8


def _fd_hessian(spec, kt, h=1e-3):
    from blochfx.atlas import _dense_eigs

    d = spec.dimension
    m = spec.band - 1
    E = lambda k: _dense_eigs(spec, k, spec.band)[0][:, m]
    out = np.empty((len(kt), d, d))
    I = np.eye(d) * h
    for j in range(d):
        for l in range(d):
            out[:, j, l] = (E(kt + I[j] + I[l]) - E(kt + I[j] - I[l]) - E(kt - I[j] + I[l])
                            + E(kt - I[j] - I[l])) / (4 * h * h)
    return out


def test_perturbative_hessian_1d(fredholm_table):
    y, k = _points(fredholm_table.spec, 8, 16)
    sd = fredholm_table.evaluate(y, k)
    ref = interpolate_band(fredholm_table.gauge.atlas, sd.kt, 2)[2]
    assert np.max(np.abs(sd.fiber.hessE - ref)) <= 1e-8
    assert np.max(np.abs(sd.fiber.hessE - _fd_hessian(fredholm_table.spec, sd.kt))) <= 1e-5


def test_perturbative_hessian_2d(table_2d):
    y, k = _points(table_2d.spec, 4, 16)
    sd = table_2d.evaluate(y, k)
    assert np.max(np.abs(sd.fiber.hessE - _fd_hessian(table_2d.spec, sd.kt))) <= 1e-5
