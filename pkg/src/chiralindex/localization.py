"""Fractional-moment localization diagnostics and parameter scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from chiralindex.flatband import DecayProfile, DistanceBins, bin_by_distance, profile_from_bins
from chiralindex.models import Lattice, LatticeRealization

MIN_ENSEMBLE = 20
DEFAULT_ETA = 1e-3
DEFAULT_S = 0.5
ROBUSTNESS_S = (0.3, 0.7)


class InsufficientEnsemble(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


def green_function(H: LatticeRealization | np.ndarray, E: float = 0.0, eta: float = DEFAULT_ETA) -> np.ndarray:
    """``(H - E - i eta)^-1`` by a dense solve."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    mat = H.H if isinstance(H, LatticeRealization) else np.atleast_2d(np.asarray(H, dtype=complex))
    n = mat.shape[0]
    shifted = mat - (E + 1j * eta) * np.eye(n)
    try:
        return linalg.solve(shifted, np.eye(n, dtype=complex), check_finite=False)
    except linalg.LinAlgError as exc:
        raise ArithmeticError(f"resolvent is singular at E={E}, eta={eta}") from exc


def site_block_norms(M: np.ndarray, lattice: Lattice, n_orbitals: int) -> np.ndarray:
    """Spectral norms of site blocks for a matrix in (chiral block, site, orbital) order."""
    V = lattice.n_sites
    if n_orbitals == 1:
        return np.abs(M)
    half = n_orbitals // 2
    blocks = M.reshape(2, V, half, 2, V, half).transpose(1, 4, 0, 2, 3, 5).reshape(V, V, n_orbitals, n_orbitals)
    return np.linalg.norm(blocks, ord=2, axis=(2, 3))


def _geometry(sample, lattice, n_orbitals):
    if isinstance(sample, LatticeRealization):
        return sample.lattice, sample.model.orbitals
    if lattice is None:
        raise ValueError("lattice geometry is required for raw matrices")
    return lattice, n_orbitals or 1


def fracmom_bins(sample, E: float, s_values, eta: float, lattice=None, n_orbitals=None) -> dict[float, DistanceBins]:
    """Distance-binned ``||G(x, y)||^s`` of one sample, for each ``s``."""
    lat, n_orb = _geometry(sample, lattice, n_orbitals)
    norms = site_block_norms(green_function(sample, E, eta), lat, n_orb)
    return {float(s): bin_by_distance(norms**s, lat) for s in s_values}


@dataclass
class FracMomentReport:
    s: float
    E: float
    eta: float
    profile: DecayProfile
    n_samples: int
    checks: dict = field(default_factory=dict)

    @property
    def beta(self) -> float:
        return self.profile.rate

    @property
    def C(self) -> float:
        return math.exp(self.profile.intercept) if np.isfinite(self.profile.intercept) else float("nan")

    @property
    def r_squared(self) -> float:
        return self.profile.r_squared

    @property
    def decaying(self) -> bool:
        """False means no exponential decay was detected (``beta_s <= 0``)."""
        return self.beta > 0

    def summary(self) -> dict:
        out = {
            "s": self.s,
            "E": self.E,
            "eta": self.eta,
            "beta_s": self.beta,
            "C_s": self.C,
            "r_squared": self.r_squared,
            "n_samples": self.n_samples,
            "decaying": self.decaying,
        }
        if not self.decaying:
            out["note"] = "no exponential decay detected"
        out.update(self.checks)
        return out


def report_from_bins(
    bins: DistanceBins,
    lattice: Lattice,
    s: float,
    E: float,
    eta: float,
    n_samples: int,
    window=None,
    floor: float = 1e-12,
) -> FracMomentReport:
    profile = profile_from_bins(bins, lattice, window, floor**s)
    if np.isnan(profile.rate):
        raise DegenerateFit(f"fewer than 3 usable distance bins in window {profile.window}")
    return FracMomentReport(s, E, eta, profile, n_samples)


def fractional_moment_fit(
    ensemble,
    E: float = 0.0,
    s: float = DEFAULT_S,
    eta: float = DEFAULT_ETA,
    lattice: Lattice | None = None,
    n_orbitals: int | None = None,
    window=None,
    min_ensemble: int = MIN_ENSEMBLE,
    floor: float = 1e-12,
    robustness: bool = False,
) -> FracMomentReport:
    """Ensemble and position average of ``||G(x, y)||^s`` binned by torus distance.

    The log-linear fit runs over ``[2, L/2 - 2]`` and ignores bins where the
    Green function norm is below ``floor`` (rounding noise). With
    ``robustness=True`` the fit is repeated at ``s = 0.3, 0.7`` and at ``eta/2``,
    and the resulting rates are attached to the report.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    ensemble = list(ensemble)
    if len(ensemble) < min_ensemble:
        raise InsufficientEnsemble(f"need at least {min_ensemble} samples, got {len(ensemble)}")
    s_values = (s, *ROBUSTNESS_S) if robustness else (s,)
    pooled: dict[float, DistanceBins] = {}
    pooled_half = None
    for sample in ensemble:
        lat, n_orb = _geometry(sample, lattice, n_orbitals)
        lattice = lat
        for key, b in fracmom_bins(sample, E, s_values, eta, lat, n_orb).items():
            pooled[key] = b if key not in pooled else pooled[key] + b
        if robustness:
            b = fracmom_bins(sample, E, (s,), eta / 2, lat, n_orb)[float(s)]
            pooled_half = b if pooled_half is None else pooled_half + b
    n = len(ensemble)
    report = report_from_bins(pooled[float(s)], lattice, s, E, eta, n, window, floor)
    if robustness:
        for other in ROBUSTNESS_S:
            report.checks[f"beta_s{other}"] = report_from_bins(pooled[other], lattice, other, E, eta, n, window, floor).beta
        report.checks["beta_half_eta"] = report_from_bins(pooled_half, lattice, s, E, eta / 2, n, window, floor).beta
    return report


@dataclass
class ScanRow:
    params: dict
    stats: dict
    gap_min: float
    decay_rate: float
    beta_s: float
    n_rejected: int

    def flat(self) -> dict:
        out = dict(self.params)
        for method, st in sorted(self.stats.items()):
            for key, val in st.items():
                out[f"{method}_{key}"] = val
        out.update(gap_min=self.gap_min, decay_rate=self.decay_rate, beta_s=self.beta_s, n_rejected=self.n_rejected)
        return out


def transition_scan(family, grid, spec, axis: str = "m", workers: int = 1) -> list[ScanRow]:
    """Invariant statistics next to the flat-band decay rate and ``beta_s`` along a parameter grid.

    ``family(value)`` builds the model at one grid value and ``spec`` is an
    :class:`~chiralindex.ensemble.EnsembleSpec`. A plateau breakdown shows up
    as a falling mode fraction together with ``decay_rate`` and ``beta_s``
    collapsing towards zero.
    """
    from chiralindex.ensemble import run_points

    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("scan grid is empty")
    points = [({axis: v}, family(v)) for v in grid]
    results = run_points(points, spec, workers=workers)
    rows = []
    for res in results:
        rows.append(
            ScanRow(
                res.params,
                res.stats,
                res.gap_min,
                res.decay.rate if res.decay is not None else float("nan"),
                res.fracmom.beta if res.fracmom is not None else float("nan"),
                res.n_rejected,
            )
        )
    return rows
