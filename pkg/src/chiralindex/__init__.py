"""Odd Chern numbers and Fredholm indices for chiral tight-binding models."""

__version__ = "0.1.0"

from chiralindex.clifford import CliffordRep, build_clifford
from chiralindex.models import (
    DisorderSpec,
    HoppingModel,
    Lattice,
    LatticeRealization,
    model1,
    model2,
    model3d_reference,
    realize,
)
from chiralindex.flatband import FlatBand, GaplessSample, contour_flatband, spectral_flatband
from chiralindex.invariants import (
    InvariantEstimate,
    dirac_phase,
    fedosov_index,
    kspace_odd_chern,
    realspace_odd_chern,
)

__all__ = [
    "CliffordRep",
    "build_clifford",
    "DisorderSpec",
    "HoppingModel",
    "Lattice",
    "LatticeRealization",
    "model1",
    "model2",
    "model3d_reference",
    "realize",
    "FlatBand",
    "GaplessSample",
    "spectral_flatband",
    "contour_flatband",
    "InvariantEstimate",
    "kspace_odd_chern",
    "realspace_odd_chern",
    "dirac_phase",
    "fedosov_index",
]
