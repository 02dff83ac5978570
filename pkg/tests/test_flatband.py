import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiralindex.flatband import (
    FlatBand,
    GaplessSample,
    QuadratureNotConverged,
    block_norms,
    contour_flatband,
    contour_nodes,
    decay_profile,
    fit_log_linear,
    profile_by_distance,
    spectral_flatband,
)
from chiralindex.models import Lattice, model1, model2, model3d_reference, realize


def random_chiral(n, rng, gap=0.5):
    """``[[0, A], [A^*, 0]]`` with singular values of ``A`` in ``[gap, 2]``."""
    W, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    s = rng.uniform(gap, 2.0, n)
    A = (W * s) @ V.conj().T
    return np.block([[np.zeros((n, n)), A], [A.conj().T, np.zeros((n, n))]])


def test_trivial_diag():
    fb = spectral_flatband(np.diag([1.0, -1.0]))
    np.testing.assert_allclose(fb.Q, np.diag([1.0, -1.0]), atol=1e-15)
    H = np.array([[0.0, 1.0], [1.0, 0.0]])
    fb = spectral_flatband(H)
    assert fb.U[0, 0] == pytest.approx(1.0)


def test_model1_flatband_invariants():
    r = realize(model1(0.5), 64)
    fb = spectral_flatband(r)
    assert fb.gap == pytest.approx(0.5, abs=1e-12)
    assert fb.involution_residual() < 1e-12
    assert fb.hermiticity_residual() < 1e-14
    assert fb.chirality_residual() < 1e-12
    assert fb.unitarity_residual() < 1e-10
    assert fb.U.shape == (64, 64)


def test_model2_flatband_invariants():
    fb = spectral_flatband(realize(model2(0.5, 1.0), 128, seed=4))
    assert fb.involution_residual() < 1e-10
    assert fb.chirality_residual() < 1e-12
    assert fb.unitarity_residual() < 1e-10


def test_svd_matches_eigh():
    r = realize(model3d_reference(2.0, lam=1.0, lam_mass=0.5), 4, seed=1)
    a = spectral_flatband(r)
    b = spectral_flatband(r, method="svd")
    assert np.max(np.abs(a.Q - b.Q)) < 1e-10
    assert a.gap == pytest.approx(b.gap, rel=1e-10)
    with pytest.raises(ValueError):
        spectral_flatband(r, method="qr")


def test_gapless_rejected():
    with pytest.raises(GaplessSample) as info:
        spectral_flatband(realize(model1(1.0), 16))
    assert info.value.gap < 1e-8
    with pytest.raises(GaplessSample):
        spectral_flatband(realize(model1(1.0), 16), method="svd")
    with pytest.raises(GaplessSample):
        contour_flatband(realize(model1(1.0), 16))


def test_contour_trivial():
    fb = contour_flatband(np.diag([1.0, -1.0]), n_nodes=128)
    np.testing.assert_allclose(fb.Q, np.diag([1.0, -1.0]), atol=1e-8)


def test_contour_matches_spectral_random():
    rng = np.random.default_rng(0)
    H = random_chiral(25, rng, gap=0.5)
    q_spec = spectral_flatband(H).Q
    q_cont = contour_flatband(H, n_nodes=256).Q
    assert np.max(np.abs(q_cont - q_spec)) < 1e-8


def test_contour_model1_and_convergence():
    r = realize(model1(0.5), 64)
    q_spec = spectral_flatband(r).Q
    errors = []
    for n in (16, 32, 64, 128):
        fb = contour_flatband(r, n_nodes=n, residual_tol=None)
        errors.append(np.max(np.abs(fb.Q - q_spec)))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-8


def test_contour_nonconvergence_reported():
    r = realize(model1(0.5), 32)
    with pytest.raises(QuadratureNotConverged) as info:
        contour_flatband(r, n_nodes=16)
    assert info.value.residual > 1e-8


def test_contour_nodes_cross_axis():
    z, w = contour_nodes(-3.0, 0.5, 64)
    right = np.isclose(z.real, 0.0)
    assert right.sum() >= 16
    # a closed contour integrates the constant 1 to zero and 1/z to 2 pi i
    assert abs(np.sum(w)) < 1e-10
    assert abs(np.sum(w / (z + 1.0)) - 2j * math.pi) < 1e-5
    # poles inside count, poles right of the gap do not; both sharpen with nodes
    z, w = contour_nodes(-3.0, 0.5, 128)
    assert abs(np.sum(w / (z + 1.0)) - 2j * math.pi) < 1e-12
    assert abs(np.sum(w / (z - 0.5))) < 1e-11


@given(st.integers(2, 12), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_flatband_properties_random(n, seed):
    H = random_chiral(n, np.random.default_rng(seed), gap=0.3)
    fb = spectral_flatband(H)
    assert fb.involution_residual() < 1e-10
    assert fb.chirality_residual() < 1e-12
    assert fb.unitarity_residual() < 1e-10
    # Q commutes with H and H Q = |H| is positive
    assert np.max(np.abs(fb.Q @ H - H @ fb.Q)) < 1e-10
    assert np.min(np.linalg.eigvalsh(0.5 * (H @ fb.Q + fb.Q @ H))) > 0


def test_decay_profile_model1():
    fb = spectral_flatband(realize(model1(0.5), 64))
    prof = decay_profile(fb)
    assert prof.rate > 0 and prof.decaying
    assert prof.r_squared > 0.99
    assert prof.rate == pytest.approx(0.7384556751492302, rel=1e-8)
    assert list(prof.distance[:3]) == [0.0, 1.0, 2.0]


def test_decay_identity_is_inf():
    lat = Lattice(1, 32)
    fb = FlatBand(np.block([[np.zeros((32, 32)), np.eye(32)], [np.eye(32), np.zeros((32, 32))]]), 1.0, lat)
    prof = decay_profile(fb)
    assert prof.rate == math.inf


def test_decay_strictly_local_is_inf():
    # m = 0 gives U = shift: nothing beyond distance 1
    prof = decay_profile(spectral_flatband(realize(model1(0.0), 32)))
    assert prof.rate == math.inf


def test_decay_ensemble_model2():
    fbs = [spectral_flatband(realize(model2(0.5, 1.0), 64, seed=1, realization=r)) for r in range(5)]
    prof = decay_profile(fbs)
    assert prof.rate > 0 and prof.r_squared > 0.9
    assert prof.count[1] == 5 * 64 * 2


def test_decay_flat_profile_not_decaying():
    lat = Lattice(1, 32)
    tables = [np.ones((32, 32))]
    prof = profile_by_distance(tables, lat)
    assert not prof.rate > 0


def test_decay_csv(tmp_path):
    prof = decay_profile(spectral_flatband(realize(model1(0.5), 16)))
    path = tmp_path / "decay.csv"
    prof.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "distance,mean_norm,std_norm,count"
    assert len(lines) == 1 + prof.distance.size


def test_fit_log_linear_exact():
    r = np.arange(10.0)
    rate, intercept, r2 = fit_log_linear(r, 3.0 * np.exp(-0.4 * r), (2, 8))
    assert rate == pytest.approx(0.4) and intercept == pytest.approx(math.log(3.0)) and r2 == pytest.approx(1.0)
    assert math.isnan(fit_log_linear(r, np.exp(-r), (2, 3))[0])


def test_block_norms_orbital_blocks():
    lat = Lattice(1, 3)
    M = np.zeros((6, 6))
    M[0:2, 2:4] = [[3.0, 0.0], [0.0, 4.0]]
    norms = block_norms(M, lat, 2)
    assert norms[0, 1] == pytest.approx(4.0) and norms[1, 0] == 0.0
