import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiralindex.clifford import build_clifford
from chiralindex.flatband import FlatBand, GaplessSample, spectral_flatband
from chiralindex.invariants import (
    InvariantEstimate,
    ball_sites,
    bloch_unitaries,
    dirac_phase,
    fedosov_index,
    kspace_odd_chern,
    kspace_prefactor,
    odd_chern_from_bloch,
    realspace_odd_chern,
    realspace_prefactor,
    summability_diagnostic,
    trace_region_sites,
    winding_from_phases,
)
from chiralindex.models import HoppingModel, Lattice, model1, model2, model3d_reference, realize


def flatband_from_U(U, lattice, n_orbitals=1):
    n = U.shape[0]
    Q = np.block([[np.zeros((n, n)), U], [U.conj().T, np.zeros((n, n))]])
    return FlatBand(Q, 1.0, lattice, n_orbitals)


def shift_unitary(L):
    """<x|u|y> = delta_{x, y+1}: Bloch symbol exp(ik) under H(k) = sum t_a exp(i a k)."""
    return np.roll(np.eye(L), 1, axis=0)


def shift_model():
    # upper-right block of t_{+1} is 1, so A(k) = exp(ik)
    return HoppingModel(1, 2, {(1,): np.array([[0, 1], [0, 0]])})


def test_estimate_fields():
    est = InvariantEstimate(0.97 + 0.01j, "x")
    assert est.value == pytest.approx(0.97)
    assert est.nearest_int == 1
    assert est.residual == pytest.approx(0.03)
    assert est.imag_leak == pytest.approx(0.01)
    assert est.accepted()
    assert not InvariantEstimate(0.5 + 0j, "x").accepted()
    assert not InvariantEstimate(1.0 + 0.06j, "x").accepted()


def test_prefactors():
    assert kspace_prefactor(1) == pytest.approx(1j / (2 * math.pi))
    assert kspace_prefactor(3) == pytest.approx(-1 / (6 * 4 * math.pi**2))
    assert realspace_prefactor(1) == realspace_prefactor(1, "local") == 1j
    assert realspace_prefactor(3) == pytest.approx(-math.pi / 3)
    assert realspace_prefactor(3, "local") == pytest.approx(math.pi / 3)
    with pytest.raises(ValueError):
        realspace_prefactor(3, "other")


@pytest.mark.parametrize("m, expected", [(-0.9, 1), (0.0, 1), (0.5, 1), (1.5, 0), (2.0, 0), (-2.0, 0)])
def test_kspace_model1(m, expected):
    est = kspace_odd_chern(model1(m), grid=256)
    assert est.nearest_int == expected
    assert est.residual < 1e-6


def test_kspace_model1_differential_forms_agree():
    U, _ = bloch_unitaries(model1(0.5), 256)
    assert odd_chern_from_bloch(U, "spectral").real == pytest.approx(1.0, abs=1e-6)
    assert odd_chern_from_bloch(U, "central").real == pytest.approx(1.0, abs=1e-3)
    assert -winding_from_phases(U) == pytest.approx(1.0, abs=1e-12)


def test_kspace_shift_symbol_sign():
    # Ch_1 = (i/2pi) int U^-1 dU gives -1 for U(k) = exp(ik)
    est = kspace_odd_chern(shift_model(), grid=64)
    assert est.value == pytest.approx(-1.0, abs=1e-12)


def test_kspace_constant_is_zero():
    model = HoppingModel(1, 2, {(0,): np.array([[0, 2], [2, 0]])})
    assert kspace_odd_chern(model, grid=32).raw == 0
    model = HoppingModel(3, 2, {(0, 0, 0): np.array([[0, 1j], [-1j, 0]])})
    assert abs(kspace_odd_chern(model, grid=6).raw) < 1e-14


def test_kspace_gapless_and_disordered():
    with pytest.raises(GaplessSample):
        kspace_odd_chern(model1(1.0), grid=256)
    with pytest.raises(ValueError):
        kspace_odd_chern(model2(0.5, 1.0))


@pytest.mark.parametrize("m, expected", [(2.0, -1), (-2.0, -1), (2.5, -1), (0.0, 2), (0.5, 2), (5.0, 0), (-5.0, 0)])
def test_kspace_model3d_plateaus(m, expected):
    est = kspace_odd_chern(model3d_reference(m), grid=24)
    assert est.nearest_int == expected
    assert est.residual < 1e-3


def test_kspace_model3d_grid_doubling():
    a = kspace_odd_chern(model3d_reference(2.0), grid=12).value
    b = kspace_odd_chern(model3d_reference(2.0), grid=24).value
    assert abs(b - a) < 1e-3
    assert kspace_odd_chern(model3d_reference(2.0), grid=16).raw == pytest.approx(-0.9999920235787397, abs=1e-10)


def test_realspace_identity_is_zero():
    lat = Lattice(1, 16)
    assert realspace_odd_chern(flatband_from_U(np.eye(16), lat)).raw == 0
    lat3 = Lattice(3, 4)
    assert realspace_odd_chern(flatband_from_U(np.eye(64), lat3)).raw == 0


def test_realspace_shift_matches_kspace_sign():
    lat = Lattice(1, 32)
    est = realspace_odd_chern(flatband_from_U(shift_unitary(32), lat))
    assert est.value == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("m", [0.5, 1.5, -0.3])
def test_realspace_model1_matches_kspace(m):
    fb = spectral_flatband(realize(model1(m), 128))
    rs = realspace_odd_chern(fb)
    ks = kspace_odd_chern(model1(m), grid=256)
    assert abs(rs.value - ks.value) < 1e-3
    assert rs.imag_leak < 1e-12


def test_realspace_frozen():
    fb = spectral_flatband(realize(model1(0.5), 32))
    assert realspace_odd_chern(fb).raw == pytest.approx(0.9999999999437736, abs=1e-12)


@pytest.mark.parametrize("m", [2.0, 0.0])
def test_realspace_d3_equals_kspace_on_same_grid(m):
    # on a clean torus the minimal-image commutator is the spectral derivative
    L = 6
    fb = spectral_flatband(realize(model3d_reference(m), L), method="svd")
    rs = realspace_odd_chern(fb)
    ks = kspace_odd_chern(model3d_reference(m), grid=L)
    assert abs(rs.raw - ks.raw) < 1e-10


def test_realspace_conventions_differ_by_sign_in_d3():
    fb = spectral_flatband(realize(model3d_reference(2.0), 6), method="svd")
    a = realspace_odd_chern(fb, convention="position").raw
    b = realspace_odd_chern(fb, convention="local").raw
    assert a == pytest.approx(-b)
    assert a.real < 0


def test_realspace_inverse_negates():
    fb = spectral_flatband(realize(model2(0.5, 1.0), 64, seed=3))
    inv = flatband_from_U(fb.U.conj().T, fb.lattice)
    # exact over the whole torus; a partial trace region only agrees up to finite-size noise
    full = realspace_odd_chern(fb, trace_region=1.0).value
    assert realspace_odd_chern(inv, trace_region=1.0).value == pytest.approx(-full, abs=1e-10)
    assert abs(realspace_odd_chern(inv).value + realspace_odd_chern(fb).value) < 0.05


@given(st.integers(0, 10_000), st.floats(0.1, 1.0))
@settings(max_examples=8, deadline=None)
def test_realspace_quantized_localized(seed, lam):
    fb = spectral_flatband(realize(model2(0.5, lam), 128, seed=seed))
    est = realspace_odd_chern(fb)
    assert est.nearest_int == 1 and est.residual < 0.1 and est.imag_leak < 0.05


def test_trace_region():
    lat = Lattice(1, 100)
    assert trace_region_sites(lat, 0.5).size == 50
    assert trace_region_sites(lat, 1.0).size == 100
    lat3 = Lattice(3, 10)
    assert trace_region_sites(lat3, 0.5).size == 8**3
    with pytest.raises(ValueError):
        trace_region_sites(lat, 0.0)


def test_realspace_trace_center_invariance():
    fb = spectral_flatband(realize(model2(0.5, 1.0), 128, seed=8))
    a = realspace_odd_chern(fb, center=[0]).value
    b = realspace_odd_chern(fb, center=[64]).value
    assert a == pytest.approx(1.0, abs=0.05) and b == pytest.approx(1.0, abs=0.05)


def test_dirac_phase_d1():
    lat = Lattice(1, 8)
    ph = dirac_phase(lat, [0.5])
    coords = ph.coords[:, 0]
    np.testing.assert_array_equal(ph.blocks[:, 0, 0].real, np.sign(coords + 0.5))


def test_dirac_phase_d3_regularized():
    lat = Lattice(3, 4)
    rep = build_clifford(3)
    ph = dirac_phase(lat, np.zeros(3), rep)
    assert ph.regularized
    i = lat.index([1, 0, 0])[0]
    np.testing.assert_allclose(ph.blocks[i], rep.generators[0], atol=1e-15)
    origin = lat.index([0, 0, 0])[0]
    np.testing.assert_allclose(ph.blocks[origin], np.eye(2))
    assert ph.involution_residual() < 1e-12 and ph.hermiticity_residual() < 1e-12


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_dirac_phase_unitary_involution(x0):
    ph = dirac_phase(Lattice(3, 4), x0)
    assert ph.involution_residual() < 1e-12
    assert ph.hermiticity_residual() < 1e-12
    eig = np.linalg.eigvalsh(ph.blocks)
    np.testing.assert_allclose(np.abs(eig), 1.0, atol=1e-12)


def test_ball_sites():
    lat = Lattice(1, 20)
    assert ball_sites(lat, 3).size == 7
    assert Lattice(3, 10).n_sites > ball_sites(Lattice(3, 10), 2).size == 125


def test_fedosov_identity_is_zero():
    lat = Lattice(1, 32)
    assert fedosov_index(flatband_from_U(np.eye(32), lat), 8).raw == 0


def test_fedosov_shift():
    lat = Lattice(1, 64)
    est = fedosov_index(flatband_from_U(shift_unitary(64), lat), 16)
    assert est.value == pytest.approx(-1.0, abs=1e-12)
    assert est.meta["converged"]
    assert sorted(est.meta["convergence"]) == [8, 12, 16]


def test_fedosov_model1_matches_realspace():
    fb = spectral_flatband(realize(model1(0.5), 256))
    fed = fedosov_index(fb, 64)
    rs = realspace_odd_chern(fb)
    assert abs(fed.value - rs.value) < 0.05
    assert fed.nearest_int == 1 and fed.imag_leak < 1e-10


def test_fedosov_x0_and_center_invariance():
    fb = spectral_flatband(realize(model2(0.5, 1.0), 128, seed=2))
    rng = np.random.default_rng(0)
    vals = [fedosov_index(fb, 32, x0=rng.uniform(0, 1, 1)).value for _ in range(5)]
    vals += [fedosov_index(fb, 32, center=[c]).value for c in (0, 40, 90)]
    assert max(vals) - min(vals) < 0.05
    assert round(np.mean(vals)) == 1


def test_fedosov_frozen_model2():
    fb = spectral_flatband(realize(model2(0.5, 1.0), 64, seed=11, realization=3))
    assert fb.gap == pytest.approx(0.26164056646477113, rel=1e-10)
    assert fedosov_index(fb, 16).raw == pytest.approx(0.9999999999997544, abs=1e-9)
    assert realspace_odd_chern(fb).raw == pytest.approx(0.99967933202073, abs=1e-9)


def test_fedosov_radius_checks():
    fb = spectral_flatband(realize(model1(0.5), 32))
    with pytest.raises(ValueError):
        fedosov_index(fb, 16)
    with pytest.raises(ValueError):
        fedosov_index(fb, 0)


def test_fedosov_d3_sign_small_torus():
    # d = 3 at desk scale: the alternating word gives the k-space sign; magnitude grows with R
    fb = spectral_flatband(realize(model3d_reference(2.0), 8), method="svd")
    est = fedosov_index(fb, 2)
    assert est.raw.real == pytest.approx(-0.8317413110780665, abs=1e-8)
    assert est.nearest_int == -1


def test_summability_identity_zero():
    rows = summability_diagnostic(flatband_from_U(np.eye(32), Lattice(1, 32)), [4, 8])
    assert all(r["p2"] == 0 and r["p1"] == 0 for r in rows)


def test_summability_frozen():
    fb = spectral_flatband(realize(model2(0.5, 1.0), 64, seed=11, realization=3))
    rows = summability_diagnostic(fb, [8, 16])
    assert rows[0]["R"] == 8
    assert rows[1]["p2"] == pytest.approx(4.000006640523362, rel=1e-9)
    assert rows[1]["p1"] == pytest.approx(2.0036668529711146, rel=1e-9)


def test_summability_custom_powers():
    fb = spectral_flatband(realize(model1(0.5), 64))
    rows = summability_diagnostic(fb, [8], powers=(4, 3))
    assert set(rows[0]) == {"R", "p4", "p3"}


def test_homotopy_plateau():
    # one disordered configuration, mass swept along a gapped path
    values = []
    for m in np.arange(0.0, 0.8001, 0.05):
        fb = spectral_flatband(realize(model2(float(m), 1.0), 128, seed=21))
        values.append(realspace_odd_chern(fb).nearest_int)
    assert set(values) == {1}
