"""Flat-band operator ``Q = 1 - 2P`` and its chiral unitary block."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from chiralindex.models import Lattice, LatticeRealization

DEFAULT_GAP_TOL = 1e-8


class GaplessSample(RuntimeError):
    """Zero energy is (numerically) in the spectrum."""

    def __init__(self, gap: float, tol: float):
        super().__init__(f"spectral gap {gap:.3e} at E=0 is below tolerance {tol:.1e}")
        self.gap = gap
        self.tol = tol


class QuadratureNotConverged(RuntimeError):
    def __init__(self, residual: float, tol: float):
        super().__init__(f"contour quadrature residual |Q^2-1| = {residual:.3e} exceeds {tol:.1e}")
        self.residual = residual


@dataclass(eq=False)
class FlatBand:
    Q: np.ndarray
    gap: float
    lattice: Lattice | None = None
    n_orbitals: int = 1
    method: str = "spectral"
    meta: dict = field(default_factory=dict)

    @property
    def n_half(self) -> int:
        return self.Q.shape[0] // 2

    @property
    def U(self) -> np.ndarray:
        n = self.n_half
        return self.Q[:n, n:]

    def involution_residual(self) -> float:
        return float(np.linalg.norm(self.Q @ self.Q - np.eye(self.Q.shape[0]), 2))

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.Q - self.Q.conj().T)))

    def chirality_residual(self) -> float:
        n = self.n_half
        return float(max(np.max(np.abs(self.Q[:n, :n])), np.max(np.abs(self.Q[n:, n:]))))

    def unitarity_residual(self) -> float:
        U = self.U
        eye = np.eye(U.shape[0])
        return float(max(np.linalg.norm(U.conj().T @ U - eye, 2), np.linalg.norm(U @ U.conj().T - eye, 2)))


def _from_matrix(H: LatticeRealization | np.ndarray):
    if isinstance(H, LatticeRealization):
        return H.H, H.lattice, H.model.n_half
    return np.asarray(H), None, 1


def spectral_flatband(
    H: LatticeRealization | np.ndarray,
    gap_tol: float = DEFAULT_GAP_TOL,
    method: str = "eigh",
) -> FlatBand:
    """``Q = V sign(E) V^*`` from a full Hermitian eigendecomposition.

    ``method="svd"`` instead takes the polar factor ``W V^*`` of the off-diagonal
    block ``A = W S V^*``; for a chiral ``H`` this is the same ``U`` at a fraction
    of the cost. Raises :class:`GaplessSample` when any eigenvalue has modulus
    ``<= gap_tol``.
    """
    mat, lattice, n_orb = _from_matrix(H)
    if method == "eigh":
        evals, evecs = np.linalg.eigh(mat)
        gap = float(np.min(np.abs(evals)))
        if gap <= gap_tol:
            raise GaplessSample(gap, gap_tol)
        Q = (evecs * np.sign(evals)) @ evecs.conj().T
        Q = 0.5 * (Q + Q.conj().T)
        meta = {"spectrum_min": float(evals[0]), "spectrum_max": float(evals[-1])}
    elif method == "svd":
        n = mat.shape[0] // 2
        W, svals, Vh = np.linalg.svd(mat[:n, n:])
        gap = float(svals[-1])
        if gap <= gap_tol:
            raise GaplessSample(gap, gap_tol)
        U = W @ Vh
        Q = np.zeros_like(mat, dtype=complex)
        Q[:n, n:] = U
        Q[n:, :n] = U.conj().T
        meta = {"spectrum_min": -float(svals[0]), "spectrum_max": float(svals[0])}
    else:
        raise ValueError(f"unknown flat-band method {method!r}")
    return FlatBand(Q, gap, lattice, n_orb, f"spectral-{method}", meta)


def _gauss_segment(z0: complex, z1: complex, n: int, stretch: float | None = None):
    """Nodes and weights for a straight segment; ``stretch`` clusters nodes at its midpoint."""
    t, w = np.polynomial.legendre.leggauss(n)
    if stretch is None:
        return z0 + (z1 - z0) * (t + 1) / 2, w * (z1 - z0) / 2
    # s = stretch * sinh(u) maps a symmetric parameter window onto the segment
    half = abs(z1 - z0) / 2
    umax = math.asinh(half / stretch)
    u = umax * t
    s = stretch * np.sinh(u)
    ds = stretch * np.cosh(u) * umax * w
    mid = (z0 + z1) / 2
    direction = (z1 - z0) / abs(z1 - z0)
    return mid + direction * s, direction * ds


def contour_nodes(spec_min: float, gap: float, n_nodes: int, height: float | None = None):
    """Counter-clockwise rectangle around ``[spec_min, -gap]`` crossing the real axis at 0.

    The right edge lies on ``Re z = 0`` with nodes clustered near the real axis;
    the left edge is one spectral width further left.
    """
    width = max(abs(spec_min), gap)
    height = 2 * width if height is None else height
    left = spec_min - width
    n_side = max(n_nodes // 4, 4)
    n_right = n_nodes - 3 * n_side
    segments = [
        _gauss_segment(-1j * height, 1j * height, max(n_right, 4), stretch=gap),
        _gauss_segment(1j * height, left + 1j * height, n_side),
        _gauss_segment(left + 1j * height, left - 1j * height, n_side),
        _gauss_segment(left - 1j * height, -1j * height, n_side),
    ]
    z = np.concatenate([s[0] for s in segments])
    w = np.concatenate([s[1] for s in segments])
    return z, w


def contour_flatband(
    H: LatticeRealization | np.ndarray,
    n_nodes: int = 256,
    gap_tol: float = DEFAULT_GAP_TOL,
    gap: float | None = None,
    spectrum_bound: float | None = None,
    residual_tol: float | None = 1e-8,
) -> FlatBand:
    """``Q = 1 - (1/(i pi)) oint (z - H)^-1 dz`` over a rectangle enclosing the negative spectrum.

    ``gap`` and ``spectrum_bound`` may be supplied; otherwise the gap comes from the
    eigenvalues and the bound from the Gershgorin row sums.
    """
    mat, lattice, n_orb = _from_matrix(H)
    n = mat.shape[0]
    if gap is None:
        gap = float(np.min(np.abs(np.linalg.eigvalsh(mat))))
    if gap <= gap_tol:
        raise GaplessSample(gap, gap_tol)
    bound = float(np.max(np.sum(np.abs(mat), axis=1))) if spectrum_bound is None else spectrum_bound
    z, w = contour_nodes(-max(bound, gap), gap, n_nodes)
    eye = np.eye(n)
    acc = np.zeros((n, n), dtype=complex)
    for zi, wi in zip(z, w):
        acc += wi * linalg.solve(zi * eye - mat, eye, check_finite=False)
    Q = eye - acc / (1j * math.pi)
    Q = 0.5 * (Q + Q.conj().T)
    fb = FlatBand(Q, gap, lattice, n_orb, "contour", {"n_nodes": int(z.size)})
    residual = fb.involution_residual()
    fb.meta["involution_residual"] = residual
    if residual_tol is not None and residual > residual_tol:
        raise QuadratureNotConverged(residual, residual_tol)
    return fb


@dataclass
class DecayProfile:
    distance: np.ndarray
    mean_norm: np.ndarray
    std_norm: np.ndarray
    count: np.ndarray
    rate: float
    intercept: float
    r_squared: float
    window: tuple[float, float]

    @property
    def decaying(self) -> bool:
        return self.rate > 0

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            write_profile_csv(fh, self)


def write_profile_csv(fh, profile) -> None:
    writer = csv.writer(fh)
    writer.writerow(["distance", "mean_norm", "std_norm", "count"])
    for row in zip(profile.distance, profile.mean_norm, profile.std_norm, profile.count):
        writer.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])


def block_norms(M: np.ndarray, lattice: Lattice, n_orbitals: int) -> np.ndarray:
    """Spectral norms of the ``n_orbitals``-sized site blocks, shape (V, V)."""
    V = lattice.n_sites
    if n_orbitals == 1:
        return np.abs(M)
    blocks = M.reshape(V, n_orbitals, V, n_orbitals).transpose(0, 2, 1, 3)
    return np.linalg.norm(blocks, ord=2, axis=(2, 3))


def fit_log_linear(distance, values, window, floor: float = 1e-13):
    """Least-squares fit ``log v = c - rate * r`` over ``window`` and values above ``floor``."""
    distance = np.asarray(distance, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (distance >= window[0]) & (distance <= window[1]) & (values > floor)
    if mask.sum() < 3:
        return float("nan"), float("nan"), float("nan")
    x = distance[mask]
    y = np.log(values[mask])
    slope, intercept = np.polyfit(x, y, 1)
    pred = intercept + slope * x
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(intercept), r2


@dataclass
class DistanceBins:
    """Running sums of a site-pair quantity grouped by torus distance."""

    levels: np.ndarray
    total: np.ndarray
    total_sq: np.ndarray
    count: np.ndarray

    def __add__(self, other: "DistanceBins") -> "DistanceBins":
        if self.levels.shape != other.levels.shape or not np.allclose(self.levels, other.levels):
            raise ValueError("distance bins come from different lattices")
        return DistanceBins(
            self.levels, self.total + other.total, self.total_sq + other.total_sq, self.count + other.count
        )


def _distance_levels(lattice: Lattice):
    dist = np.round(np.linalg.norm(lattice.displacements(), axis=-1), 9).ravel()
    return np.unique(dist, return_inverse=True)


def bin_by_distance(table, lattice: Lattice) -> DistanceBins:
    levels, inverse = _distance_levels(lattice)
    row = np.asarray(table, dtype=float).ravel()
    return DistanceBins(
        levels,
        np.bincount(inverse, weights=row, minlength=levels.size),
        np.bincount(inverse, weights=row**2, minlength=levels.size),
        np.bincount(inverse, minlength=levels.size),
    )


def profile_from_bins(bins: DistanceBins, lattice: Lattice, window=None, floor: float = 1e-13) -> DecayProfile:
    """Mean and spread per distance, then the log-linear decay fit."""
    levels, count = bins.levels, bins.count
    mean = bins.total / count
    std = np.sqrt(np.maximum(bins.total_sq / count - mean**2, 0.0))
    if window is None:
        window = (2.0, lattice.L / 2 - 2)
    in_window = (levels >= window[0]) & (levels <= window[1])
    if np.any(in_window) and np.all(mean[in_window] <= floor):
        # everything beyond the core is below the noise floor: faster than measurable
        rate, intercept, r2 = float("inf"), float(np.log(mean[0])) if mean[0] > 0 else float("nan"), float("nan")
    else:
        rate, intercept, r2 = fit_log_linear(levels, mean, window, floor)
    return DecayProfile(levels, mean, std, count, rate, intercept, r2, tuple(window))


def profile_by_distance(norm_tables, lattice: Lattice, window=None, floor: float = 1e-13) -> DecayProfile:
    """Bin site-pair quantities by torus distance, pooling all tables, and fit the decay."""
    bins = None
    for table in norm_tables:
        b = bin_by_distance(table, lattice)
        bins = b if bins is None else bins + b
    if bins is None:
        raise ValueError("no tables to profile")
    return profile_from_bins(bins, lattice, window, floor)


def decay_profile(fbs, lattice: Lattice | None = None, window=None, floor: float = 1e-13) -> DecayProfile:
    """Distance profile of ``||<x|U|y>||`` averaged over positions and over the given flat bands.

    A rate of ``+inf`` means nothing above ``floor`` inside the fit window; a rate
    ``<= 0`` signals a non-decaying (delocalized) profile.
    """
    if isinstance(fbs, FlatBand):
        fbs = [fbs]
    lattice = lattice or fbs[0].lattice
    if lattice is None:
        raise ValueError("lattice geometry is required")
    tables = [block_norms(fb.U, lattice, fb.n_orbitals) for fb in fbs]
    return profile_by_distance(tables, lattice, window, floor)
