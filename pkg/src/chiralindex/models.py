"""Chiral tight-binding models on finite tori.

Conventions
-----------
A hopping model stores matrices ``t_a`` with ``(H psi)(x) = sum_a t_a psi(x - a)``,
so the Bloch Hamiltonian is ``H(k) = sum_a t_a exp(i a.k)`` and ``t_{-a} = t_a^*``.
Realizations order the basis as (chiral block, site, orbital): the first
``N * L**d`` rows carry chirality +1, so the chiral unitary is the upper-right
block of the flat-band operator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from chiralindex.clifford import PAULI_X, PAULI_Y, PAULI_Z

SIGMA_PLUS = 0.5 * (PAULI_X + 1j * PAULI_Y)
SIGMA_MINUS = 0.5 * (PAULI_X - 1j * PAULI_Y)

_TOL = 1e-12


@dataclass(frozen=True)
class Lattice:
    """Periodic ``Z_L^d`` with C-ordered site indexing."""

    d: int
    L: int

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @cached_property
    def coords(self) -> np.ndarray:
        grid = np.indices((self.L,) * self.d).reshape(self.d, -1).T
        return grid.astype(np.int64)

    def index(self, coords) -> np.ndarray:
        coords = np.asarray(coords) % self.L
        return np.ravel_multi_index(tuple(np.atleast_2d(coords).T), (self.L,) * self.d)

    def wrap(self, v):
        """Minimal-image representative in ``[-L/2, L/2)``."""
        half = self.L // 2
        return (np.asarray(v) + half) % self.L - half

    def centered(self, center=None) -> np.ndarray:
        """Site coordinates relative to ``center`` (default origin), minimal image."""
        c = np.zeros(self.d, dtype=np.int64) if center is None else np.asarray(center)
        return self.wrap(self.coords - c)

    def distance(self, center=None) -> np.ndarray:
        """Euclidean torus distance of every site from ``center``."""
        return np.linalg.norm(self.centered(center), axis=1)

    def displacements(self) -> np.ndarray:
        """``wrap(x - y)`` for every pair of sites, shape (V, V, d)."""
        c = self.coords
        return self.wrap(c[:, None, :] - c[None, :, :])


def _as_matrix(m, n: int, what: str) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.shape != (n, n):
        raise ValueError(f"{what} must be {n}x{n}, got shape {a.shape}")
    return a


def _positive(a: tuple[int, ...]) -> bool:
    for c in a:
        if c != 0:
            return c > 0
    return False


@dataclass(frozen=True)
class DisorderSpec:
    """Bond factors ``1 + bond_coupling * w`` and on-site terms ``site_coupling * w' * site_matrix``.

    ``w`` and ``w'`` are independent and uniform on ``[-width/2, width/2]``; the
    reverse hop of a bond carries the complex conjugate factor.
    """

    bond_coupling: float = 0.0
    site_coupling: float = 0.0
    site_matrix: np.ndarray | None = None
    width: float = 1.0
    complex_bonds: bool = False

    @property
    def is_clean(self) -> bool:
        return self.bond_coupling == 0.0 and self.site_coupling == 0.0


@dataclass(frozen=True, eq=False)
class HoppingModel:
    dimension: int
    orbitals: int
    hoppings: Mapping[tuple[int, ...], np.ndarray]
    chiral_frame: np.ndarray | None = None
    magnetic_form: np.ndarray | None = None
    disorder: DisorderSpec = field(default_factory=DisorderSpec)
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        d, n = self.dimension, self.orbitals
        if d < 1 or d % 2 == 0:
            raise ValueError(f"dimension must be odd and positive, got {d}")
        if n < 2 or n % 2:
            raise ValueError(f"number of orbitals must be even, got {n}")
        half = n // 2
        target = np.diag([1.0] * half + [-1.0] * half).astype(complex)
        frame = target if self.chiral_frame is None else _as_matrix(self.chiral_frame, n, "chiral frame")
        if not np.allclose(frame @ frame, np.eye(n), atol=1e-10) or not np.allclose(frame, frame.conj().T, atol=1e-10):
            raise ValueError("chiral frame must be a Hermitian involution")
        vals, vecs = np.linalg.eigh(frame)
        if not np.allclose(vals, np.repeat([-1.0, 1.0], half), atol=1e-8):
            raise ValueError("chiral frame must have equal +1 and -1 multiplicities")
        rotation = vecs[:, ::-1] if not np.allclose(frame, target) else np.eye(n, dtype=complex)

        hops: dict[tuple[int, ...], np.ndarray] = {}
        for a, t in self.hoppings.items():
            a = tuple(int(c) for c in a)
            if len(a) != d:
                raise ValueError(f"displacement {a} does not have {d} components")
            hops[a] = rotation.conj().T @ _as_matrix(t, n, f"hopping {a}") @ rotation
        for a in list(hops):
            b = tuple(-c for c in a)
            if b not in hops:
                hops[b] = hops[a].conj().T
            elif not np.allclose(hops[b], hops[a].conj().T, atol=1e-10):
                raise ValueError(f"hoppings violate t_(-a) = t_a^* at a={a}")
        for a, t in hops.items():
            if not np.allclose(target @ t @ target, -t, atol=1e-10):
                raise ValueError(f"hopping {a} is not odd under the chiral frame")
            t.setflags(write=False)

        form = np.zeros((d, d)) if self.magnetic_form is None else np.asarray(self.magnetic_form, dtype=float)
        if form.shape != (d, d) or not np.allclose(form, -form.T):
            raise ValueError("magnetic form must be an antisymmetric d x d matrix")

        dis = self.disorder
        if dis.site_matrix is not None:
            sm = rotation.conj().T @ _as_matrix(dis.site_matrix, n, "site matrix") @ rotation
            if not np.allclose(sm, sm.conj().T) or not np.allclose(target @ sm @ target, -sm):
                raise ValueError("site disorder matrix must be Hermitian and chirally odd")
            sm.setflags(write=False)
            dis = DisorderSpec(dis.bond_coupling, dis.site_coupling, sm, dis.width, dis.complex_bonds)
        elif dis.site_coupling != 0.0:
            raise ValueError("site disorder needs a site matrix")

        object.__setattr__(self, "hoppings", dict(sorted(hops.items())))
        object.__setattr__(self, "chiral_frame", target)
        object.__setattr__(self, "frame_rotation", rotation)
        object.__setattr__(self, "magnetic_form", form)
        object.__setattr__(self, "disorder", dis)

    @property
    def n_half(self) -> int:
        return self.orbitals // 2

    @property
    def hopping_range(self) -> int:
        return max((max(abs(c) for c in a) for a in self.hoppings), default=0)

    @property
    def is_clean(self) -> bool:
        return self.disorder.is_clean and not np.any(self.magnetic_form)

    def with_params(self, **kw) -> "HoppingModel":
        """Rebuild a named built-in with updated parameters."""
        params = dict(self.params)
        params.update(kw)
        return builtin_model(self.name, **params)


def bloch_hamiltonian(model: HoppingModel, k) -> np.ndarray:
    """``H(k) = sum_a t_a exp(i a.k)`` for one k-point or a stack of shape (..., d)."""
    if not model.is_clean:
        raise ValueError("Bloch Hamiltonian requires a clean model without magnetic flux")
    k = np.asarray(k, dtype=float)
    single = k.ndim == 1
    k = np.atleast_2d(k)
    if k.shape[-1] != model.dimension:
        raise ValueError(f"k must have {model.dimension} components")
    out = np.zeros(k.shape[:-1] + (model.orbitals, model.orbitals), dtype=complex)
    for a, t in model.hoppings.items():
        out += np.exp(1j * (k @ np.asarray(a, dtype=float)))[..., None, None] * t
    return out[0] if single else out


def model1(m: float) -> HoppingModel:
    """Two-band chiral chain; winding 1 for ``|m| < 1``, 0 for ``|m| > 1``."""
    return HoppingModel(
        1,
        2,
        {(-1,): SIGMA_PLUS, (1,): SIGMA_MINUS, (0,): m * PAULI_Y},
        chiral_frame=PAULI_Z,
        name="model1",
        params={"m": float(m)},
    )


def model2(m: float, lam: float, lam_mass: float | None = None) -> HoppingModel:
    """:func:`model1` with random bond factors ``1 + lam*w`` and masses ``m + lam_mass*w'``.

    ``lam_mass`` defaults to ``lam``.
    """
    lam_mass = lam if lam_mass is None else lam_mass
    base = model1(m)
    return HoppingModel(
        1,
        2,
        base.hoppings,
        chiral_frame=PAULI_Z,
        disorder=DisorderSpec(float(lam), float(lam_mass), PAULI_Y),
        name="model2",
        params={"m": float(m), "lam": float(lam), "lam_mass": float(lam_mass)},
    )


def model3d_reference(m: float, lam: float = 0.0, lam_mass: float = 0.0, flux=None) -> HoppingModel:
    """Four-band cubic chiral model with ``A(k) = (m + sum cos k_j) + i sum sin k_j tau_j``.

    ``A(k)`` is a multiple of an SU(2) matrix, so the winding is the degree of
    ``(m + sum cos k, sin k)`` on the 3-sphere: nonzero for ``|m| < 3`` away from
    ``m = +-1``.
    """
    eye2 = np.eye(2, dtype=complex)
    taus = (PAULI_X, PAULI_Y, PAULI_Z)
    blocks = {(0, 0, 0): m * eye2}
    for j in range(3):
        e = [0, 0, 0]
        e[j] = 1
        blocks[tuple(e)] = 0.5 * (eye2 + taus[j])
        blocks[tuple(-c for c in e)] = 0.5 * (eye2 - taus[j])
    zero = np.zeros((2, 2), dtype=complex)
    hops = {}
    for a, blk in blocks.items():
        minus = blocks[tuple(-c for c in a)]
        hops[a] = np.block([[zero, blk], [minus.conj().T, zero]])
    site = np.block([[zero, eye2], [eye2, zero]])
    return HoppingModel(
        3,
        4,
        hops,
        magnetic_form=flux,
        disorder=DisorderSpec(float(lam), float(lam_mass), site),
        name="model3d",
        params={"m": float(m), "lam": float(lam), "lam_mass": float(lam_mass)},
    )


BUILTINS = {"model1": model1, "model2": model2, "model3d": model3d_reference}


def builtin_model(name: str, **params) -> HoppingModel:
    if name not in BUILTINS:
        raise KeyError(f"unknown model {name!r}; built-ins are {sorted(BUILTINS)}")
    return BUILTINS[name](**params)


@dataclass(frozen=True, eq=False)
class LatticeRealization:
    model: HoppingModel
    lattice: Lattice
    H: np.ndarray
    seed: int | None
    realization: int
    bond_fields: Mapping[tuple[int, ...], np.ndarray]
    site_field: np.ndarray | None

    @property
    def n_half(self) -> int:
        return self.model.n_half * self.lattice.n_sites

    @property
    def flux(self) -> np.ndarray:
        return self.model.magnetic_form

    def chiral_operator(self) -> np.ndarray:
        n = self.n_half
        return np.concatenate([np.ones(n), -np.ones(n)])

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.H - self.H.conj().T), initial=0.0))

    def chirality_residual(self) -> float:
        s = self.chiral_operator()
        return float(np.max(np.abs(s[:, None] * self.H * s[None, :] + self.H), initial=0.0))

    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.H)


def sample_disorder(model: HoppingModel, L: int, seed: int | None, realization: int = 0):
    """Bond and site fields for one realization.

    The stream is keyed by ``(seed, realization)`` only, so ensembles are
    reproducible regardless of evaluation order.
    """
    lattice = Lattice(model.dimension, L)
    dis = model.disorder
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(int(realization),)))
    V = lattice.n_sites
    site = rng.uniform(-dis.width / 2, dis.width / 2, V)
    bonds = {}
    for a in model.hoppings:
        if not _positive(a):
            continue
        w = rng.uniform(-dis.width / 2, dis.width / 2, V).astype(complex)
        if dis.complex_bonds:
            w = w + 1j * rng.uniform(-dis.width / 2, dis.width / 2, V)
        bonds[a] = w
    return bonds, site


def check_flux(form: np.ndarray, L: int) -> None:
    q = form * L / (2 * math.pi)
    if not np.allclose(q, np.round(q), atol=1e-9):
        raise ValueError(f"magnetic fluxes {form.tolist()} are not commensurate with L={L}")


def assemble(model: HoppingModel, L: int, bond_fields=None, site_field=None) -> np.ndarray:
    """Dense Hamiltonian on ``Z_L^d`` for the given disorder fields.

    ``H[x, y] = exp(i y^B x) (1 + lam w_(x,a)) t_a`` for ``y = x - a``; the bond field of a
    positive displacement ``a`` is indexed by its first endpoint ``x``.
    """
    lattice = Lattice(model.dimension, L)
    if L <= 2 * model.hopping_range:
        raise ValueError(f"L={L} must exceed twice the hopping range {model.hopping_range}")
    form = model.magnetic_form
    magnetic = bool(np.any(form))
    if magnetic:
        check_flux(form, L)
    n, half, V = model.orbitals, model.n_half, lattice.n_sites
    dis = model.disorder
    coords = lattice.coords
    Hs = np.zeros((V, n, V, n), dtype=complex)
    xs = np.arange(V)
    for a, t in model.hoppings.items():
        av = np.asarray(a)
        ys = lattice.index(coords - av)
        coef = np.ones(V, dtype=complex)
        if any(av) and bond_fields is not None and dis.bond_coupling != 0.0:
            if _positive(a):
                coef = 1 + dis.bond_coupling * bond_fields[a]
            else:
                # reverse of the bond (y, -a) whose first endpoint is y = x - a
                coef = np.conj(1 + dis.bond_coupling * bond_fields[tuple(-c for c in a)][ys])
        if magnetic:
            coef = coef * np.exp(1j * np.einsum("vi,ij,vj->v", coords[ys], form, coords))
        Hs[xs, :, ys, :] += coef[:, None, None] * t
    if site_field is not None and dis.site_coupling != 0.0:
        Hs[xs, :, xs, :] += (dis.site_coupling * np.asarray(site_field))[:, None, None] * dis.site_matrix
    H = Hs.reshape(V, 2, half, V, 2, half).transpose(1, 0, 2, 4, 3, 5).reshape(n * V, n * V)
    return np.ascontiguousarray(H)


def realize(model: HoppingModel, L: int, seed: int | None = 0, realization: int = 0) -> LatticeRealization:
    """Sample one disorder configuration and assemble the Hamiltonian."""
    bonds, site = sample_disorder(model, L, seed, realization)
    H = assemble(model, L, bonds, site)
    return LatticeRealization(model, Lattice(model.dimension, L), H, seed, realization, bonds, site)


def magnetic_translation(model: HoppingModel, L: int, a, n_orbitals: int | None = None) -> np.ndarray:
    """Unitary ``(V_a psi)(x) = exp(i a^B x) psi(x - a)`` in the chiral-block ordering."""
    lattice = Lattice(model.dimension, L)
    check_flux(model.magnetic_form, L)
    av = np.asarray(a)
    coords = lattice.coords
    V = lattice.n_sites
    src = lattice.index(coords - av)
    phase = np.exp(1j * coords @ (model.magnetic_form.T @ av))
    T = np.zeros((V, V), dtype=complex)
    T[np.arange(V), src] = phase
    n_orb = model.orbitals if n_orbitals is None else n_orbitals
    blocks = 2 if n_orb == model.orbitals else 1
    per_block = n_orb // blocks
    return np.kron(np.eye(blocks), np.kron(T, np.eye(per_block)))


def shift_fields(model: HoppingModel, L: int, bond_fields, site_field, a):
    """Disorder fields of the configuration translated by ``a``: ``w'(x) = w(x - a)``."""
    lattice = Lattice(model.dimension, L)
    src = lattice.index(lattice.coords - np.asarray(a))
    return {b: f[src] for b, f in bond_fields.items()}, site_field[src]


def _encode_matrix(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


def _decode_matrix(raw) -> np.ndarray:
    a = np.asarray(raw, dtype=float)
    if a.ndim == 3 and a.shape[-1] == 2:
        return a[..., 0] + 1j * a[..., 1]
    if a.ndim == 2:
        return a.astype(complex)
    raise ValueError("matrices are lists of rows of [re, im] pairs")


def model_from_dict(doc: Mapping) -> HoppingModel:
    """Build a model from its JSON document or from ``{"builtin": name, "params": {...}}``."""
    if "builtin" in doc:
        return builtin_model(doc["builtin"], **doc.get("params", {}))
    for key in ("dimension", "orbitals", "hoppings"):
        if key not in doc:
            raise ValueError(f"model document lacks required field {key!r}")
    hops = {tuple(h["displacement"]): _decode_matrix(h["matrix"]) for h in doc["hoppings"]}
    dis = doc.get("disorder") or {}
    site_matrix = dis.get("site_matrix")
    return HoppingModel(
        int(doc["dimension"]),
        int(doc["orbitals"]),
        hops,
        chiral_frame=None if doc.get("chiral_frame") is None else _decode_matrix(doc["chiral_frame"]),
        magnetic_form=doc.get("magnetic_form"),
        disorder=DisorderSpec(
            float(dis.get("bond_coupling", 0.0)),
            float(dis.get("site_coupling", 0.0)),
            None if site_matrix is None else _decode_matrix(site_matrix),
            float(dis.get("width", 1.0)),
            bool(dis.get("complex_bonds", False)),
        ),
        name=doc.get("name", "custom"),
    )


def model_to_dict(model: HoppingModel) -> dict:
    """JSON document in the stored (diagonal chiral frame) basis."""
    dis = model.disorder
    return {
        "name": model.name,
        "dimension": model.dimension,
        "orbitals": model.orbitals,
        "hoppings": [{"displacement": list(a), "matrix": _encode_matrix(t)} for a, t in model.hoppings.items()],
        "chiral_frame": _encode_matrix(model.chiral_frame),
        "magnetic_form": np.asarray(model.magnetic_form).tolist(),
        "disorder": {
            "bond_coupling": dis.bond_coupling,
            "site_coupling": dis.site_coupling,
            "site_matrix": None if dis.site_matrix is None else _encode_matrix(dis.site_matrix),
            "width": dis.width,
            "complex_bonds": dis.complex_bonds,
        },
    }


def load_model(path) -> HoppingModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
