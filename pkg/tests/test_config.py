import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from blochfx.config import (DEFAULT_TOLERANCES, FourierField, FourierTerm, LatticeSpec,
                            SlowFieldSpec, check_flux_admissibility, dumps_spec, eval_slow_fields,
                            landau_spec, load_spec, mathieu_spec, spec_from_dict)
from blochfx.errors import FluxNotAdmissible, ParseError, ValidationError

MINIMAL = """
dimension = 1
band = 1
[potential]
terms = [{ n = [1], cos = 2.0 }]
"""

UNIT_SQUARE = LatticeSpec(((1.0, 0.0), (0.0, 1.0)))


def test_minimal_1d_defaults():
    spec = load_spec(MINIMAL)
    assert spec.dimension == 1
    assert spec.magnetic.B0 == 0.0 and spec.magnetic.flux_index == 0
    assert spec.lattice.lengths[0] == pytest.approx(2 * math.pi)
    assert spec.band == 1 and spec.nx == 32 and spec.nk == 32


def test_omitted_tolerances_filled_and_echoed():
    spec = load_spec(MINIMAL)
    assert spec.tol == DEFAULT_TOLERANCES
    assert spec.to_dict()["tolerances"] == DEFAULT_TOLERANCES


def test_flux_2pi_rejected():
    text = """
dimension = 2
[lattice]
basis = [[1.0, 0.0], [0.0, 1.0]]
[magnetic]
B0 = 6.283185307179586
"""
    with pytest.raises(ValidationError):
        load_spec(text)


@pytest.mark.parametrize("B0, nu", [(4 * math.pi, 1), (0.0, 0), (8 * math.pi, 2), (-4 * math.pi, -1)])
def test_flux_index(B0, nu):
    assert check_flux_admissibility(UNIT_SQUARE, B0) == nu


def test_flux_6pi_not_admissible():
    with pytest.raises(FluxNotAdmissible):
        check_flux_admissibility(UNIT_SQUARE, 6 * math.pi)


def test_1d_requires_zero_field():
    with pytest.raises(FluxNotAdmissible):
        check_flux_admissibility(LatticeSpec(((2 * math.pi,),)), 1.0)


def test_malformed_text_is_parse_error():
    with pytest.raises(ParseError):
        load_spec("dimension = = 1")


@pytest.mark.parametrize("changes, field", [
    ({"nx": 4}, "nx"), ({"nk": 2}, "nk"), ({"gap_tol": 0.0}, "gap_tol"),
    ({"epsilons": ["3/4"]}, "epsilons"), ({"band": 0}, "band"), ({"bogus": 1}, "bogus"),
])
def test_validation_names_field(changes, field):
    with pytest.raises(ValidationError) as err:
        spec_from_dict({"dimension": 1, **changes})
    assert err.value.field == field


def test_zero_slow_fields():
    sf = eval_slow_fields(SlowFieldSpec(A=(FourierField(),)), np.linspace(0, 6, 7)[:, None], order=2)
    for arr in (sf.A, sf.W, sf.dA, sf.dW, sf.d2A, sf.d2W, sf.B):
        assert np.all(arr == 0)


def test_cos_slow_potential_at_origin():
    W = FourierField(terms=(FourierTerm((1,), cos=1.0),))
    sf = eval_slow_fields(SlowFieldSpec(A=(FourierField(),), W=W), np.zeros((1, 1)), order=2)
    assert sf.W[0] == 1.0
    assert sf.dW[0, 0] == 0.0
    assert sf.d2W[0, 0, 0] == -1.0


def _random_field(rng, d, nterms=4):
    terms = tuple(FourierTerm(tuple(int(v) for v in rng.integers(-3, 4, d)),
                              float(rng.normal()), float(rng.normal())) for _ in range(nterms))
    return FourierField(float(rng.normal()), terms)


@pytest.mark.parametrize("d", [1, 2])
def test_derivatives_match_fourth_order_differences(d):
    rng = np.random.default_rng(7)
    spec = SlowFieldSpec(A=tuple(_random_field(rng, d) for _ in range(d)), W=_random_field(rng, d))
    y = rng.uniform(0, 2 * np.pi, (100, d))
    sf = eval_slow_fields(spec, y, order=2)
    h = 1e-3
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        f = {s: eval_slow_fields(spec, y + s * e, order=1) for s in (-2, -1, 1, 2)}

        def d4(get):
            return (8 * (get(f[1]) - get(f[-1])) - (get(f[2]) - get(f[-2]))) / (12 * h)

        for got, want in ((sf.dA[..., :, l], d4(lambda s: s.A)), (sf.dW[..., l], d4(lambda s: s.W)),
                          (sf.d2A[..., :, l, :], d4(lambda s: s.dA)),
                          (sf.d2W[..., l, :], d4(lambda s: s.dW))):
            scale = max(1.0, np.max(np.abs(want)))
            assert np.max(np.abs(got - want)) / scale < 1e-6


def test_axis_integral_matches_quadrature():
    rng = np.random.default_rng(3)
    f = _random_field(rng, 2)
    z0 = rng.uniform(0, 6, (5, 2))
    t = np.linspace(0, 0.7, 2001)
    for axis in (0, 1):
        pts = z0[:, None, :] + t[None, :, None] * np.eye(2)[axis]
        ref = trapezoid(f(pts), t, axis=1)
        assert np.allclose(f.axis_integral(z0, axis, 0.7), ref, atol=1e-7)


def test_landau_magnetic_field_curl():
    spec = landau_spec(nu=1, v=1.0, A_terms=[{"terms": [{"n": [0, 1], "cos": 0.2}]},
                                             {"terms": [{"n": [1, 0], "sin": 0.15}]}])
    y = np.array([[0.3, 1.1]])
    sf = eval_slow_fields(spec.slow, y, order=1)
    assert sf.B[0, 2] == pytest.approx(0.15 * math.cos(0.3) + 0.2 * math.sin(1.1))


_field_st = st.builds(
    lambda c, a, b, n: {"constant": c, "terms": [{"n": [n], "cos": a, "sin": b}]},
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.integers(-4, 4))


@settings(max_examples=40, deadline=None)
@given(V=_field_st, W=_field_st, A=_field_st, nx=st.integers(8, 64), nk=st.integers(8, 64),
       band=st.integers(1, 4), order=st.sampled_from([2, 4]), twist=st.floats(-1, 1),
       eps=st.lists(st.sampled_from(["1/8", "1/16", "1/3", "1/2", "2/7"]), min_size=1, max_size=4))
def test_serialize_round_trip(V, W, A, nx, nk, band, order, twist, eps):
    spec = spec_from_dict({"dimension": 1, "potential": V, "slow": {"W": W, "A": [A]}, "nx": nx,
                           "nk": nk, "band": band, "stencil_order": order, "gauge_twist": twist,
                           "epsilons": eps})
    back = load_spec(dumps_spec(spec))
    assert back == spec
    assert back.spec_hash() == spec.spec_hash()


def test_round_trip_2d():
    spec = landau_spec(nu=2, v=3.0, W_terms={"terms": [{"n": [1, 1], "cos": 0.3}]})
    assert load_spec(dumps_spec(spec)) == spec


@settings(max_examples=30, deadline=None)
@given(ratio=st.floats(-5, 5).filter(lambda r: abs(r - round(r)) > 1e-6),
       scale=st.floats(0.5, 2.0))
def test_admitted_fields_are_integer_flux(ratio, scale):
    lat = LatticeSpec(((scale, 0.0), (0.0, 1.0)))
    with pytest.raises(FluxNotAdmissible):
        check_flux_admissibility(lat, 4 * math.pi * ratio / scale)
    nu = round(ratio)
    assert check_flux_admissibility(lat, 4 * math.pi * nu / scale) == nu


def test_mathieu_helper_and_json_config():
    spec = load_spec('{"dimension": 1, "potential": {"terms": [{"n": [1], "cos": 2.0}]}}')
    assert spec == mathieu_spec()
