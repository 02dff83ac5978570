"""Odd Chern number estimators: Brillouin-zone integral, real-space trace per
volume, and the Fredholm index of the compressed chiral unitary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from chiralindex.clifford import CliffordRep, build_clifford, double_factorial, signed_permutations
from chiralindex.flatband import DEFAULT_GAP_TOL, FlatBand, GaplessSample
from chiralindex.models import HoppingModel, Lattice, bloch_hamiltonian

RESIDUAL_TOL = 0.1
IMAG_TOL = 0.05

# Real-space prefactor conventions. "position" pairs i[X_j, .] with the
# Brillouin-zone formula under H(k) = sum_a t_a e^{i a.k}; "local" is the
# constant written for the local formula of the cyclic cocycle.
CONVENTIONS = ("position", "local")


@dataclass
class InvariantEstimate:
    raw: complex
    method: str
    meta: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(np.real(self.raw))

    @property
    def nearest_int(self) -> int:
        return int(round(self.value))

    @property
    def residual(self) -> float:
        return abs(self.value - self.nearest_int)

    @property
    def imag_leak(self) -> float:
        return abs(float(np.imag(self.raw)))

    def accepted(self, residual_tol: float = RESIDUAL_TOL, imag_tol: float = IMAG_TOL) -> bool:
        return self.residual < residual_tol and self.imag_leak < imag_tol


def kspace_prefactor(d: int) -> complex:
    return math.factorial((d - 1) // 2) / math.factorial(d) * (1j / (2 * math.pi)) ** ((d + 1) // 2)


def realspace_prefactor(d: int, convention: str = "position") -> complex:
    if convention == "position":
        return 1j * (1j * math.pi) ** ((d - 1) // 2) / double_factorial(d)
    if convention == "local":
        return 1j * (-1j * math.pi) ** ((d - 1) // 2) / double_factorial(d)
    raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")


def bloch_unitaries(model: HoppingModel, grid: int, gap_tol: float = DEFAULT_GAP_TOL):
    """Chiral unitary ``U(k)`` on the uniform grid, shape ``(grid,)*d + (N, N)``, and the gap."""
    d, N = model.dimension, model.n_half
    axes = np.arange(grid) * (2 * math.pi / grid)
    ks = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    Hk = bloch_hamiltonian(model, ks)
    evals, evecs = np.linalg.eigh(Hk)
    gap = float(np.min(np.abs(evals)))
    if gap <= gap_tol:
        raise GaplessSample(gap, gap_tol)
    Qk = np.einsum("kab,kb,kcb->kac", evecs, np.sign(evals), evecs.conj())
    U = Qk[:, :N, N:]
    return U.reshape((grid,) * d + (N, N)), gap


def _derivative(U: np.ndarray, axis: int, grid: int, scheme: str) -> np.ndarray:
    h = 2 * math.pi / grid
    if scheme == "central":
        return (np.roll(U, -1, axis=axis) - np.roll(U, 1, axis=axis)) / (2 * h)
    if scheme == "spectral":
        freq = np.fft.fftfreq(grid, d=1.0 / grid)
        if grid % 2 == 0:
            freq[grid // 2] = 0.0
        shape = [1] * U.ndim
        shape[axis] = grid
        return np.fft.ifft(np.fft.fft(U, axis=axis) * (1j * freq).reshape(shape), axis=axis)
    raise ValueError(f"unknown derivative scheme {scheme!r}")


def winding_from_phases(U: np.ndarray) -> float:
    """Winding of ``det U(k)`` around a closed 1-d loop from summed phase increments."""
    dets = np.linalg.det(U) if U.ndim == 3 else U
    steps = np.angle(np.roll(dets, -1) / dets)
    return float(np.sum(steps) / (2 * math.pi))


def odd_chern_from_bloch(U: np.ndarray, derivative: str = "spectral") -> complex:
    """Brillouin-zone sum of ``sum_rho sign(rho) tr prod U^-1 d_rho U`` with the odd Chern prefactor."""
    d = U.ndim - 2
    grid = U.shape[0]
    Uinv = np.conj(np.swapaxes(U, -1, -2))
    A = [Uinv @ _derivative(U, j, grid, derivative) for j in range(d)]
    total = 0.0 + 0.0j
    for perm, sign in signed_permutations(d):
        prod = A[perm[0]]
        for j in perm[1:]:
            prod = prod @ A[j]
        total += sign * np.trace(prod, axis1=-2, axis2=-1).sum()
    volume = (2 * math.pi) ** d
    return complex(kspace_prefactor(d) * total * volume / grid**d)


def kspace_odd_chern(
    model: HoppingModel,
    grid: int = 64,
    derivative: str = "spectral",
    gap_tol: float = DEFAULT_GAP_TOL,
) -> InvariantEstimate:
    """Odd Chern number of the Bloch chiral unitary over the Brillouin torus.

    In one dimension the default uses the phase increments of ``det U(k)``,
    which is exact once the grid resolves the loop; ``derivative="central"`` or
    ``"spectral"`` forces the differential form instead.
    """
    U, gap = bloch_unitaries(model, grid, gap_tol)
    if model.dimension == 1 and derivative == "spectral":
        raw = complex(-winding_from_phases(U))
        scheme = "phase"
    else:
        raw = odd_chern_from_bloch(U, derivative)
        scheme = derivative
    return InvariantEstimate(raw, "kspace", {"grid": grid, "derivative": scheme, "gap": gap, "d": model.dimension})


def trace_region_sites(lattice: Lattice, fraction: float, center=None) -> np.ndarray:
    """Sites of the central cube holding about ``fraction`` of the torus."""
    if not 0 < fraction <= 1:
        raise ValueError("trace region fraction must lie in (0, 1]")
    side = min(lattice.L, max(1, int(round(lattice.L * fraction ** (1 / lattice.d)))))
    lo = -(side // 2)
    rel = lattice.centered(center)
    mask = np.all((rel >= lo) & (rel < lo + side), axis=1)
    return np.flatnonzero(mask)


def position_commutators(U: np.ndarray, lattice: Lattice, n_orbitals: int):
    """``[X_j, U]`` with minimal-image displacements, one matrix per axis."""
    disp = lattice.displacements()
    out = []
    for j in range(lattice.d):
        Dj = np.kron(disp[:, :, j], np.ones((n_orbitals, n_orbitals)))
        out.append(Dj * U)
    return out


def realspace_odd_chern(
    fb: FlatBand,
    lattice: Lattice | None = None,
    trace_region: float = 0.5,
    convention: str = "position",
    center=None,
) -> InvariantEstimate:
    """Trace per volume of ``sum_rho sign(rho) prod_j U^-1 i[X_rho_j, U]`` over a central region."""
    lattice = lattice or fb.lattice
    if lattice is None:
        raise ValueError("lattice geometry is required")
    N = fb.n_orbitals
    U = fb.U
    d = lattice.d
    Uinv = U.conj().T
    A = [Uinv @ (1j * c) for c in position_commutators(U, lattice, N)]
    sites = trace_region_sites(lattice, trace_region, center)
    rows = (sites[:, None] * N + np.arange(N)).ravel()
    total = 0.0 + 0.0j
    for perm, sign in signed_permutations(d):
        prod = A[perm[0]][rows]
        for j in perm[1:-1]:
            prod = prod @ A[j]
        if d > 1:
            diag = np.einsum("rc,cr->r", prod, A[perm[-1]][:, rows])
        else:
            diag = prod[np.arange(rows.size), rows]
        total += sign * diag.sum()
    raw = realspace_prefactor(d, convention) * total / sites.size
    return InvariantEstimate(
        complex(raw),
        "realspace",
        {"L": lattice.L, "d": d, "trace_sites": int(sites.size), "convention": convention, "gap": fb.gap},
    )


@dataclass
class DiracPhase:
    """Site-diagonal blocks ``F(x) = (x + x0).s / |x + x0|`` on centered coordinates."""

    x0: np.ndarray
    coords: np.ndarray
    blocks: np.ndarray
    regularized: bool
    rep: CliffordRep

    def involution_residual(self) -> float:
        sq = np.einsum("sab,sbc->sac", self.blocks, self.blocks)
        return float(np.max(np.abs(sq - np.eye(self.rep.size))))

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.blocks - np.conj(np.swapaxes(self.blocks, 1, 2)))))


def dirac_phase(lattice: Lattice, x0, rep: CliffordRep | None = None, center=None, sites=None) -> DiracPhase:
    """Phase of the shifted position-Dirac operator.

    A site where ``x + x0 = 0`` gets ``F = 1`` (the zero mode is removed by setting
    ``D = 1`` there).
    """
    rep = rep or build_clifford(lattice.d)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (lattice.d,)).copy()
    coords = lattice.centered(center)
    if sites is not None:
        coords = coords[sites]
    shifted = coords + x0
    norms = np.linalg.norm(shifted, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    blocks = rep.dot(shifted / safe[:, None])
    blocks[zero] = rep.identity()
    return DiracPhase(x0, coords, blocks, bool(zero.any()), rep)


def ball_sites(lattice: Lattice, radius: int, center=None) -> np.ndarray:
    """Sites within sup-norm torus distance ``radius`` of ``center``."""
    rel = lattice.centered(center)
    return np.flatnonzero(np.max(np.abs(rel), axis=1) <= radius)


def _truncated_operators(fb: FlatBand, lattice: Lattice, x0, radius: int, rep: CliffordRep, center):
    N = fb.n_orbitals
    sites = ball_sites(lattice, radius, center)
    idx = (sites[:, None] * N + np.arange(N)).ravel()
    Ub = fb.U[np.ix_(idx, idx)]
    Ut = np.kron(Ub, rep.identity())
    phase = dirac_phase(lattice, x0, rep, center, sites)
    per_site = np.einsum("ab,scd->sacbd", np.eye(N), phase.blocks).reshape(sites.size, N * rep.size, N * rep.size)
    F = linalg.block_diag(*per_site)
    return Ut, F


def _fedosov_raw(Ut: np.ndarray, F: np.ndarray, d: int) -> complex:
    eye = np.eye(Ut.shape[0])
    Uh = Ut.conj().T
    comm = F @ Ut - Ut @ F
    comm_h = F @ Uh - Uh @ F
    # cyclic word (U^-1 - 1)[F, U][F, U^-1][F, U]...: d commutators ending in U
    eta = Uh - eye
    for j in range(d):
        eta = eta @ (comm if j % 2 == 0 else comm_h)
    # graded trace Tr'(eta) = Tr(F d eta)/2 with d eta = F eta + eta F for odd degree
    graded = 0.5 * (np.trace(eta) + np.trace(F @ eta @ F))
    lam = 2.0 ** (-d) * 1j ** (d + 1)
    return complex(lam * graded)


def fedosov_index(
    fb: FlatBand,
    R_trunc: int,
    x0=None,
    lattice: Lattice | None = None,
    rep: CliffordRep | None = None,
    center=None,
    spread_tol: float = 0.05,
) -> InvariantEstimate:
    """Index of ``E U E`` from the trace formula ``lambda_d Tr'(eta)``.

    ``eta = (U^-1 - 1)[F, U][F, U^-1]...[F, U]`` is the cyclic word of the
    K_1 pairing (``d`` commutators, alternating ``U`` and ``U^-1``); for
    ``d = 1`` it is ``(U^-1 - 1)[F, U]``. Every operator is truncated to the
    sup-norm ball of radius ``R_trunc`` around ``center``; estimates at
    ``R_trunc/2`` and ``3 R_trunc/4`` are recorded to judge convergence.
    """
    lattice = lattice or fb.lattice
    if lattice is None:
        raise ValueError("lattice geometry is required")
    d = lattice.d
    if not 0 < R_trunc < lattice.L / 2:
        raise ValueError(f"truncation radius {R_trunc} must lie in (0, L/2) for L={lattice.L}")
    rep = rep or build_clifford(d)
    x0 = np.full(d, 0.5) if x0 is None else np.asarray(x0, dtype=float)
    radii = sorted({max(1, R_trunc // 2), max(1, (3 * R_trunc) // 4), R_trunc})
    values = {}
    for R in radii:
        Ut, F = _truncated_operators(fb, lattice, x0, R, rep, center)
        values[R] = _fedosov_raw(Ut, F, d)
    spread = max(abs(v - values[R_trunc]) for v in values.values())
    return InvariantEstimate(
        values[R_trunc],
        "fedosov",
        {
            "L": lattice.L,
            "d": d,
            "trunc_radius": R_trunc,
            "x0": x0.tolist(),
            "convergence": {int(R): complex(v) for R, v in values.items()},
            "converged": spread < spread_tol,
            "gap": fb.gap,
        },
    )


def summability_diagnostic(
    fb: FlatBand,
    radii,
    x0=None,
    lattice: Lattice | None = None,
    rep: CliffordRep | None = None,
    center=None,
    powers=None,
) -> list[dict]:
    """Partial Schatten sums ``sum_i s_i^p`` of the truncated commutator ``[F, U]``.

    Defaults to ``p = d + 1`` and ``p = d``.
    """
    lattice = lattice or fb.lattice
    d = lattice.d
    rep = rep or build_clifford(d)
    x0 = np.full(d, 0.5) if x0 is None else np.asarray(x0, dtype=float)
    powers = (d + 1, d) if powers is None else tuple(powers)
    rows = []
    for R in radii:
        Ut, F = _truncated_operators(fb, lattice, x0, R, rep, center)
        s = linalg.svdvals(F @ Ut - Ut @ F)
        rows.append({"R": int(R), **{f"p{p}": float(np.sum(s**p)) for p in powers}})
    return rows
