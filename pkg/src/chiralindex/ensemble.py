"""Seeded ensembles of realizations: per-sample invariants, rejection counting and statistics."""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from chiralindex.flatband import (
    DEFAULT_GAP_TOL,
    DecayProfile,
    DistanceBins,
    GaplessSample,
    bin_by_distance,
    block_norms,
    contour_flatband,
    profile_from_bins,
    spectral_flatband,
)
from chiralindex.invariants import (
    RESIDUAL_TOL,
    InvariantEstimate,
    fedosov_index,
    kspace_odd_chern,
    realspace_odd_chern,
)
from chiralindex.localization import (
    DEFAULT_ETA,
    DEFAULT_S,
    MIN_ENSEMBLE,
    DegenerateFit,
    FracMomentReport,
    fracmom_bins,
    report_from_bins,
)
from chiralindex.models import HoppingModel, Lattice, realize

METHODS = ("kspace", "realspace", "fedosov")
FLATBAND_METHODS = ("eigh", "svd", "contour")
ROW_FIELDS = (
    "method",
    "d",
    "L",
    "m",
    "lambda",
    "seed",
    "realization",
    "value_re",
    "value_im",
    "nearest_int",
    "residual",
    "imag_leak",
    "trunc_radius",
    "gap",
)


@dataclass(frozen=True)
class EnsembleSpec:
    L: int
    n_samples: int = 1
    seed: int = 0
    methods: tuple[str, ...] = ("realspace",)
    trunc_radius: int | None = None
    trace_region: float = 0.5
    flatband: str = "eigh"
    kspace_grid: int = 256
    x0: tuple[float, ...] | None = None
    gap_tol: float = DEFAULT_GAP_TOL
    decay: bool = False
    fracmom: bool = False
    fracmom_s: float = DEFAULT_S
    fracmom_eta: float = DEFAULT_ETA
    fracmom_E: float = 0.0

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.flatband not in FLATBAND_METHODS:
            raise ValueError(f"unknown flat-band method {self.flatband!r}")
        if self.n_samples < 1:
            raise ValueError("ensemble size must be at least 1")
        if self.L < 2:
            raise ValueError("L must be at least 2")

    @property
    def radius(self) -> int:
        return self.trunc_radius if self.trunc_radius is not None else max(1, self.L // 4)


@dataclass
class SampleOutcome:
    point: int
    realization: int
    rows: list[dict]
    gap: float
    rejected: bool
    decay_bins: DistanceBins | None = None
    fracmom_bins: DistanceBins | None = None


@dataclass
class PointResult:
    params: dict
    model: HoppingModel
    rows: list[dict]
    stats: dict
    gap_min: float
    n_rejected: int
    decay: DecayProfile | None = None
    fracmom: FracMomentReport | None = None
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "params": self.params,
            "model": self.model.name,
            "stats": self.stats,
            "gap_min": self.gap_min,
            "n_rejected": self.n_rejected,
        }
        if self.decay is not None:
            out["decay_rate"] = self.decay.rate
            out["decay_r_squared"] = self.decay.r_squared
        if self.fracmom is not None:
            out["fracmom"] = self.fracmom.summary()
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def estimate_row(est: InvariantEstimate, model: HoppingModel, L: int, seed, realization: int, radius) -> dict:
    return {
        "method": est.method,
        "d": model.dimension,
        "L": L,
        "m": model.params.get("m", float("nan")),
        "lambda": model.params.get("lam", 0.0),
        "seed": seed,
        "realization": realization,
        "value_re": float(np.real(est.raw)),
        "value_im": float(np.imag(est.raw)),
        "nearest_int": est.nearest_int,
        "residual": est.residual,
        "imag_leak": est.imag_leak,
        "trunc_radius": radius,
        "gap": est.meta.get("gap", float("nan")),
    }


def _flatband(sample, spec: EnsembleSpec):
    if spec.flatband == "contour":
        return contour_flatband(sample, gap_tol=spec.gap_tol)
    return spectral_flatband(sample, spec.gap_tol, method=spec.flatband)


def evaluate_sample(task) -> SampleOutcome:
    """Invariants of one seeded realization; a gapless sample is returned as rejected."""
    point, realization, model, spec = task
    sample = realize(model, spec.L, seed=spec.seed, realization=realization)
    fm = None
    if spec.fracmom:
        fm = fracmom_bins(sample, spec.fracmom_E, (spec.fracmom_s,), spec.fracmom_eta)[float(spec.fracmom_s)]
    try:
        fb = _flatband(sample, spec)
    except GaplessSample as exc:
        return SampleOutcome(point, realization, [], exc.gap, True, None, fm)
    rows = []
    if "realspace" in spec.methods:
        est = realspace_odd_chern(fb, trace_region=spec.trace_region)
        rows.append(estimate_row(est, model, spec.L, spec.seed, realization, None))
    if "fedosov" in spec.methods:
        est = fedosov_index(fb, spec.radius, x0=spec.x0)
        rows.append(estimate_row(est, model, spec.L, spec.seed, realization, spec.radius))
    decay = bin_by_distance(block_norms(fb.U, sample.lattice, fb.n_orbitals), sample.lattice) if spec.decay else None
    return SampleOutcome(point, realization, rows, fb.gap, False, decay, fm)


def method_stats(rows: list[dict], residual_tol: float = RESIDUAL_TOL) -> dict:
    """Mean, sample std, mode of the rounded values and its fraction, worst residual."""
    values = np.array([r["value_re"] for r in rows], dtype=float)
    ints = [int(r["nearest_int"]) for r in rows]
    if values.size == 0:
        return {"n": 0}
    mode, hits = Counter(ints).most_common(1)[0]
    return {
        "n": int(values.size),
        "mean": float(values.mean()),
        "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "min": float(values.min()),
        "max": float(values.max()),
        "mode": int(mode),
        "mode_fraction": hits / values.size,
        "max_residual": float(max(r["residual"] for r in rows)),
        "max_imag_leak": float(max(r["imag_leak"] for r in rows)),
        "n_above_residual_tol": int(sum(r["residual"] >= residual_tol for r in rows)),
    }


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda r: (r["method"], r["m"], r["lambda"], r["realization"]))


def run_points(points, spec: EnsembleSpec, workers: int = 1) -> list[PointResult]:
    """Evaluate every ``(params, model)`` point over ``spec.n_samples`` realizations.

    Tasks are independent, so ``workers > 1`` spreads them over a process pool;
    results are gathered and sorted before any statistics are formed.
    """
    points = list(points)
    for _, model in points:
        if "kspace" in spec.methods and not model.is_clean:
            raise ValueError(f"kspace method needs a clean model, got disorder in {model.name}")
    real_methods = {"realspace", "fedosov"} & set(spec.methods)
    needs_samples = bool(real_methods) or spec.decay or spec.fracmom
    tasks = [(i, r, model, spec) for i, (_, model) in enumerate(points) for r in range(spec.n_samples)] if needs_samples else []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(evaluate_sample, tasks, chunksize=1))
    else:
        outcomes = [evaluate_sample(t) for t in tasks]
    outcomes.sort(key=lambda o: (o.point, o.realization))

    results = []
    for i, (params, model) in enumerate(points):
        mine = [o for o in outcomes if o.point == i]
        rows = [row for o in mine for row in o.rows]
        notes = []
        gaps = [o.gap for o in mine]
        if "kspace" in spec.methods:
            try:
                est = kspace_odd_chern(model, spec.kspace_grid, gap_tol=spec.gap_tol)
                rows.append(estimate_row(est, model, spec.L, spec.seed, 0, None))
                gaps.append(est.meta["gap"])
            except GaplessSample as exc:
                notes.append(f"kspace: {exc}")
                gaps.append(exc.gap)
        rows = sort_rows(rows)
        stats = {m: method_stats([r for r in rows if r["method"] == m]) for m in spec.methods}
        n_rejected = sum(o.rejected for o in mine)
        for st in stats.values():
            st["n_rejected"] = n_rejected
            st["rejection_rate"] = n_rejected / spec.n_samples
        decay = None
        if spec.decay:
            bins = [o.decay_bins for o in mine if o.decay_bins is not None]
            if bins:
                decay = profile_from_bins(_sum_bins(bins), Lattice(model.dimension, spec.L))
        fracmom = None
        if spec.fracmom:
            bins = [o.fracmom_bins for o in mine]
            required = 1 if model.disorder.is_clean else MIN_ENSEMBLE
            if len(bins) < required:
                notes.append(f"fracmom: need at least {required} samples, got {len(bins)}")
            else:
                try:
                    fracmom = report_from_bins(
                        _sum_bins(bins), Lattice(model.dimension, spec.L), spec.fracmom_s, spec.fracmom_E, spec.fracmom_eta, len(bins)
                    )
                except DegenerateFit as exc:
                    notes.append(f"fracmom: {exc}")
        gap_min = float(min(gaps)) if gaps else float("nan")
        results.append(PointResult(dict(params), model, rows, stats, gap_min, n_rejected, decay, fracmom, notes))
    return results


def _sum_bins(bins):
    total = bins[0]
    for b in bins[1:]:
        total = total + b
    return total

