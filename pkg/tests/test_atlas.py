import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochfx.acceptance import magnetic_2d_model
from blochfx.atlas import (_dense_eigs, build_band_atlas, cached_band_atlas, chern_number,
                           dk_eigenvector, fix_smooth_gauge, interpolate_band, load_atlas,
                           neighbor_overlap_angles, plaquette_curvature, save_atlas, seam_residual,
                           zak_phase)
from blochfx.config import landau_spec, mathieu_spec
from blochfx.errors import AssumptionAViolated, AssumptionBViolated, GapTooSmall, NotApplicable

# frozen from a run at nx = 32, nk = 32 (unchanged at nk = 64)
MATHIEU_MARGIN = 1.6397251134985553


def _phases(rng, n):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, n))[:, None]


def test_free_band_not_isolated():
    atlas = build_band_atlas(mathieu_spec(V0=0.0))
    assert not atlas.assumption_a
    assert "not isolated" in atlas.audit_message
    with pytest.raises(AssumptionAViolated):
        atlas.require_assumption_a()
    with pytest.raises((GapTooSmall, AssumptionAViolated)):
        fix_smooth_gauge(atlas)


def test_mathieu_margin(mathieu_atlas):
    assert mathieu_atlas.assumption_a
    assert mathieu_atlas.upper_margin == pytest.approx(MATHIEU_MARGIN, abs=1e-9)
    assert "isolated" in mathieu_atlas.audit_message


def test_margin_stable_under_refinement(mathieu):
    fine = build_band_atlas(mathieu.with_(nk=64))
    assert abs(fine.upper_margin - MATHIEU_MARGIN) < 1e-6


def test_band_periodic_in_k(mathieu_atlas, rng):
    k = rng.uniform(-1, 1, (20, 1))
    a = interpolate_band(mathieu_atlas, k, 2)
    b = interpolate_band(mathieu_atlas, k + 1.0, 2)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-9)


def test_interpolant_exact_at_nodes(mathieu_atlas):
    E = interpolate_band(mathieu_atlas, mathieu_atlas.nodes)[0]
    assert np.max(np.abs(E - mathieu_atlas.band_energies)) < 1e-12


def test_interpolant_off_node_matches_direct(mathieu):
    atlas = build_band_atlas(mathieu.with_(nk=64))
    k = np.random.default_rng(50).uniform(-0.5, 0.5, (50, 1))
    direct = _dense_eigs(mathieu, k, 1)[0][:, 0]
    assert np.max(np.abs(interpolate_band(atlas, k)[0] - direct)) < 1e-7


def test_interpolant_spectral_decay():
    # a weak potential keeps the band far from analytic round-off at small nk
    spec = mathieu_spec(V0=0.3)
    k = np.random.default_rng(0).uniform(-0.5, 0.5, (50, 1))
    direct = _dense_eigs(spec, k, 1)[0][:, 0]
    err = {nk: np.max(np.abs(interpolate_band(build_band_atlas(spec.with_(nk=nk)), k)[0] - direct))
           for nk in (32, 64)}
    assert err[32] / err[64] >= 50


def test_interpolant_derivatives(mathieu_atlas, rng):
    k = rng.uniform(-0.5, 0.5, (10, 1))
    h = 1e-4
    E, g, H = interpolate_band(mathieu_atlas, k, 2)
    Ep, gp, _ = interpolate_band(mathieu_atlas, k + h, 2)
    Em, gm, _ = interpolate_band(mathieu_atlas, k - h, 2)
    assert np.allclose(g[:, 0], (Ep - Em) / (2 * h), atol=1e-7)
    assert np.allclose(H[:, 0, 0], (gp[:, 0] - gm[:, 0]) / (2 * h), atol=1e-6)
    assert abs(interpolate_band(mathieu_atlas, np.zeros(1), 1)[1][0, 0]) < 1e-12


def test_zak_phase_quantized(mathieu_atlas):
    z = zak_phase(mathieu_atlas)
    assert abs(z - np.pi) < 1e-6


def test_zak_phase_refined_wilson_loop(mathieu):
    z = zak_phase(build_band_atlas(mathieu.with_(nx=64, nk=128)))
    assert abs(z - np.pi) < 1e-6


def test_zak_phase_gauge_invariant(mathieu_atlas, rng):
    V = mathieu_atlas.vectors * _phases(rng, len(mathieu_atlas.nodes))
    assert abs(zak_phase(mathieu_atlas, V) - zak_phase(mathieu_atlas)) < 1e-10


def test_zak_chern_dimension_guards(mathieu_atlas):
    with pytest.raises(NotApplicable):
        chern_number(mathieu_atlas)
    with pytest.raises(NotApplicable):
        zak_phase(build_band_atlas(landau_spec(nu=0, v=10.0, nx=12, nk=8)))


def test_zero_field_chern_zero():
    atlas = build_band_atlas(landau_spec(nu=0, v=10.0, nx=16, nk=8))
    assert chern_number(atlas) == 0


@pytest.fixture(scope="module")
def split_band2():
    return build_band_atlas(magnetic_2d_model().with_(band=2))


def test_scanned_chern_band(split_band2):
    # scan over bands 1..3 at v = 10 gave (0, -1, 0)
    assert chern_number(split_band2) == -1
    with pytest.raises(AssumptionBViolated):
        fix_smooth_gauge(split_band2)


def test_chern_gauge_invariant(split_band2):
    rng = np.random.default_rng(9)
    V = split_band2.vectors * _phases(rng, len(split_band2.nodes))
    assert chern_number(split_band2, V) == chern_number(split_band2)
    assert np.sum(plaquette_curvature(split_band2, V)) == pytest.approx(-2 * np.pi, abs=1e-8)


@pytest.mark.slow
def test_chern_unchanged_when_nk_doubles(split_band2):
    fine = build_band_atlas(split_band2.spec.with_(nk=16))
    assert chern_number(fine) == chern_number(split_band2)


def test_landau_pair_flagged():
    atlas = build_band_atlas(landau_spec(nu=1, v=0.0, nx=24, nk=8))
    assert not atlas.assumption_a


def test_gauge_smooth_and_periodic(mathieu_gauge):
    assert np.max(np.abs(neighbor_overlap_angles(mathieu_gauge))) < np.pi / 8
    for k in np.linspace(-0.5, 0.5, 9):
        assert seam_residual(mathieu_gauge, [k]) <= 1e-8


def test_gauge_2d(table_2d):
    gauge = table_2d.gauge
    assert np.max(np.abs(neighbor_overlap_angles(gauge))) < np.pi / 4
    k = np.array([0.37, -1.2])
    for ax in (0, 1):
        assert seam_residual(gauge, k, ax) <= 1e-8


def test_node_vectors_normalized(mathieu_gauge):
    w = mathieu_gauge.atlas.spec.lattice.lengths[0] / mathieu_gauge.atlas.spec.nx
    norms = w * np.sum(np.abs(mathieu_gauge.vectors) ** 2, axis=1)
    assert np.max(np.abs(norms - 1)) < 1e-10


@settings(max_examples=10, deadline=None)
@given(k=st.floats(-1.5, 1.5))
def test_dk_eigenvector(mathieu_gauge, k):
    fd = mathieu_gauge.evaluate([[k]])
    w = fd.resolvent.weight
    d = dk_eigenvector(mathieu_gauge, [k])[0]
    assert abs(np.real(w * np.vdot(fd.psi[0], d))) < 1e-8
    assert abs(w * np.vdot(fd.psi[0], fd.Q[0, 0])) < 1e-10
    h = 1e-4
    p = mathieu_gauge.evaluate([[k + h], [k - h]]).psi
    assert np.max(np.abs((p[0] - p[1]) / (2 * h) - d)) * np.sqrt(w) < 1e-5


def test_berry_shift_under_twist(mathieu_atlas, rng):
    base = fix_smooth_gauge(mathieu_atlas, twist=0.0)
    twisted = fix_smooth_gauge(mathieu_atlas, twist=0.4)
    k = rng.uniform(-1, 1, (12, 1))
    _, dchi, _ = twisted._twist(k)
    shift = twisted.evaluate(k).berry - base.evaluate(k).berry
    assert np.allclose(shift, -dchi, atol=1e-6)
    assert np.allclose(twisted.berry - base.berry, -twisted._twist(mathieu_atlas.nodes)[1], atol=1e-6)


def test_local_gap_check():
    # odd nk keeps the zone edge (gap 0.05) off the grid; the nodes pass the audit
    spec = mathieu_spec(V0=0.05, nk=9, gap_tol=0.08)
    gauge = fix_smooth_gauge(build_band_atlas(spec))
    gauge.evaluate([[0.1]])
    with pytest.raises(GapTooSmall):
        gauge.evaluate([[0.5]])


def test_atlas_cache_round_trip(tmp_path, mathieu):
    atlas = build_band_atlas(mathieu.with_(nk=16))
    path = save_atlas(atlas, tmp_path)
    assert atlas.spec.spec_hash() in path.name
    back = load_atlas(atlas.spec, tmp_path)
    assert np.array_equal(back.energies, atlas.energies)
    assert np.array_equal(back.vectors, atlas.vectors)
    assert load_atlas(mathieu.with_(nk=12), tmp_path) is None
    again = cached_band_atlas(atlas.spec, tmp_path)
    assert again.upper_margin == atlas.upper_margin
