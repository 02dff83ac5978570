"""Irreducible odd complex Clifford representations and the trace identities
behind the local index formula.

Generators satisfy ``s_i s_j + s_j s_i = 2 delta_ij`` and are fixed so that
``s_1 s_2 ... s_d = (-i)**((d-1)/2) * 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations, product

import numpy as np

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

MAX_DIMENSION = 7


def double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def permutation_sign(perm) -> int:
    """Signature of a permutation given as a sequence of 0-based images."""
    perm = list(perm)
    sign = 1
    seen = [False] * len(perm)
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def signed_permutations(d: int):
    """All ``(perm, sign)`` pairs of the symmetric group on ``range(d)``."""
    return [(p, permutation_sign(p)) for p in permutations(range(d))]


@dataclass(frozen=True)
class CliffordRep:
    dimension: int
    generators: tuple[np.ndarray, ...]

    @property
    def size(self) -> int:
        return self.generators[0].shape[0]

    def identity(self) -> np.ndarray:
        return np.eye(self.size, dtype=complex)

    def product(self) -> np.ndarray:
        out = self.identity()
        for g in self.generators:
            out = out @ g
        return out

    def dot(self, vector) -> np.ndarray:
        """``vector . sigma`` for one vector, or a stack of them with shape (..., d)."""
        vector = np.asarray(vector, dtype=float)
        return np.tensordot(vector, np.stack(self.generators), axes=([-1], [0]))

    def anticommutator_residual(self) -> float:
        eye = self.identity()
        worst = 0.0
        for i, a in enumerate(self.generators):
            for j, b in enumerate(self.generators):
                target = 2 * eye if i == j else 0 * eye
                worst = max(worst, float(np.max(np.abs(a @ b + b @ a - target))))
        return worst

    def hermiticity_residual(self) -> float:
        return max(float(np.max(np.abs(g - g.conj().T))) for g in self.generators)

    def product_convention_residual(self) -> float:
        target = (-1j) ** ((self.dimension - 1) // 2) * self.identity()
        return float(np.max(np.abs(self.product() - target)))


def build_clifford(d: int) -> CliffordRep:
    """Irreducible representation of the complex Clifford algebra with ``d`` generators.

    Built by the usual doubling ``s_j -> s_j (x) X`` plus ``1 (x) Y, 1 (x) Z``;
    the last generator is negated when the ordered product comes out with the
    wrong sign.
    """
    if not isinstance(d, (int, np.integer)) or d < 1 or d % 2 == 0:
        raise ValueError(f"Clifford dimension must be an odd positive integer, got {d!r}")
    if d > MAX_DIMENSION:
        raise ValueError(f"dimension {d} exceeds the supported limit {MAX_DIMENSION}")
    gens = [np.ones((1, 1), dtype=complex)]
    while len(gens) < d:
        eye = np.eye(gens[0].shape[0], dtype=complex)
        gens = [np.kron(g, PAULI_X) for g in gens] + [np.kron(eye, PAULI_Y), np.kron(eye, PAULI_Z)]
    rep = CliffordRep(int(d), tuple(gens))
    target = (-1j) ** ((d - 1) // 2)
    if not np.allclose(rep.product(), target * rep.identity()):
        gens[-1] = -gens[-1]
        rep = CliffordRep(int(d), tuple(gens))
    return rep


def clifford_trace_product(rep: CliffordRep, indices) -> complex:
    """Trace of ``s_{i_1} ... s_{i_q}`` with 1-based generator indices."""
    out = rep.identity()
    for i in indices:
        if not 1 <= i <= rep.dimension:
            raise IndexError(f"generator index {i} outside 1..{rep.dimension}")
        out = out @ rep.generators[i - 1]
    return complex(np.trace(out))


def trace_sigma_dot(rep: CliffordRep, vectors) -> complex:
    """``tr((y_1 . s)(y_2 . s) ... (y_d . s))`` by explicit matrix products."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape != (rep.dimension, rep.dimension):
        raise ValueError(f"expected {rep.dimension} vectors in R^{rep.dimension}")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("vectors must be finite")
    out = rep.identity()
    for y in vectors:
        out = out @ rep.dot(y)
    return complex(np.trace(out))


@dataclass(frozen=True)
class Simplex:
    """Oriented simplex ``[v_0, ..., v_d]`` in R^d."""

    vertices: np.ndarray

    @classmethod
    def from_points(cls, points, origin_last: bool = True) -> "Simplex":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        zero = np.zeros((1, pts.shape[1]))
        verts = np.vstack([pts, zero]) if origin_last else np.vstack([zero, pts])
        return cls(verts)

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @property
    def volume(self) -> float:
        d = self.dimension
        edges = self.vertices[1:] - self.vertices[0]
        return float(np.linalg.det(edges)) / math.factorial(d)

    @property
    def orientation(self) -> int:
        return int(np.sign(self.volume))


def near_degenerate(points, rel_tol: float = 1e-6) -> bool:
    """True when ``|det[x_1..x_d]|`` is tiny relative to ``prod |x_i|``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scale = float(np.prod(np.linalg.norm(pts, axis=1)))
    return abs(np.linalg.det(pts)) < rel_tol * scale or scale == 0.0


def key_identity_prefactor(d: int) -> complex:
    return 2**d * (-1j * math.pi) ** ((d - 1) // 2) / double_factorial(d)


def key_identity_rhs(points) -> complex:
    """Closed form ``2^d (-i pi)^((d-1)/2) / d!! * det[x_1 ... x_d]``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    if pts.shape[0] != d:
        raise ValueError(f"need {d} points in R^{d}")
    det = 0.0
    for perm, sign in signed_permutations(d):
        det += sign * math.prod(pts[i, perm[i]] for i in range(d))
    return key_identity_prefactor(d) * det


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def key_identity_integrand(rep: CliffordRep, points, x: np.ndarray) -> np.ndarray:
    """``tr prod_i (unit(x_i + x) - unit(x_{i+1} + x)) . s`` at each row of ``x``.

    ``x_{d+1}`` is the origin.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = rep.dimension
    verts = np.vstack([pts, np.zeros((1, d))])
    x = np.atleast_2d(x)
    units = [_unit(v + x) for v in verts]
    out = None
    for i in range(d):
        m = rep.dot(units[i] - units[i + 1])
        out = m if out is None else np.einsum("nab,nbc->nac", out, m)
    return np.einsum("naa->n", out)


@dataclass(frozen=True)
class IntegralEstimate:
    value: complex
    stderr: float
    tail: float
    n_samples: int
    cutoff: float

    @property
    def converged(self) -> bool:
        return self.stderr <= 0.02 * max(abs(self.value), 1e-300) and self.tail <= self.stderr * 3


def _sample_radial_angles(rng: np.random.Generator, d: int, theta_max: float, n: int) -> np.ndarray:
    # density proportional to sin(theta)^(d-1) on [0, theta_max], by rejection
    if d == 1:
        return rng.uniform(0.0, theta_max, n)
    out = np.empty(0)
    while out.size < n:
        t = rng.uniform(0.0, theta_max, 2 * (n - out.size) + 16)
        keep = rng.uniform(size=t.size) < np.sin(t) ** (d - 1)
        out = np.concatenate([out, t[keep]])
    return out[:n]


def key_identity_lhs(
    points,
    n_samples: int = 2_000_000,
    cutoff_factor: float = 50.0,
    seed: int | None = 0,
    rep: CliffordRep | None = None,
) -> IntegralEstimate:
    """Monte Carlo estimate of the integral over R^d of :func:`key_identity_integrand`.

    Points are drawn from a density ``~ (s^2 + r^2)^(-(d+1)/2)`` on the ball of radius
    ``cutoff_factor * max|x_i|``, which matches the ``|x|^-(d+1)`` decay of the
    integrand; ``x`` and ``-x`` are paired so the odd leading tail cancels per pair.
    ``tail`` estimates the neglected contribution outside the ball from the
    outermost shell, assuming the remaining ``R^-2`` fall-off.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    rep = rep or build_clifford(d)
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(pts, axis=1)
    scale = float(np.mean(norms))
    cutoff = cutoff_factor * float(np.max(norms))
    theta_max = math.atan(cutoff / scale)

    ts = np.linspace(0.0, theta_max, 20001)
    ang_norm = float(np.trapezoid(np.sin(ts) ** (d - 1), ts)) if d > 1 else theta_max
    sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)

    n_pairs = max(n_samples // 2, 1)
    chunk = 50_000
    sums = []
    shell = []
    done = 0
    while done < n_pairs:
        m = min(chunk, n_pairs - done)
        theta = _sample_radial_angles(rng, d, theta_max, m)
        r = scale * np.tan(theta)
        direction = rng.normal(size=(m, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        x = r[:, None] * direction
        density = scale / (ang_norm * sphere) * (scale**2 + r**2) ** (-(d + 1) / 2)
        f = 0.5 * (key_identity_integrand(rep, pts, x) + key_identity_integrand(rep, pts, -x))
        w = f / density
        sums.append(w)
        shell.append(np.where(r > cutoff / 2, w, 0.0))
        done += m
    w = np.concatenate(sums)
    value = complex(np.mean(w))
    stderr = float(np.std(w, ddof=1) / math.sqrt(w.size)) if w.size > 1 else float("inf")
    tail = abs(complex(np.mean(np.concatenate(shell)))) / 3.0
    return IntegralEstimate(value, stderr, tail, 2 * w.size, cutoff)


def reduced_word(indices) -> tuple[int, tuple[int, ...]]:
    """Normal form ``sign * s_{j_1} ... s_{j_k}`` (``j`` strictly increasing) of a generator word.

    Uses only ``s_i s_j = -s_j s_i`` for ``i != j`` and ``s_i^2 = 1``.
    """
    word = list(indices)
    sign = 1
    # bubble sort, one sign flip per swap of distinct neighbours
    for end in range(len(word) - 1, 0, -1):
        for i in range(end):
            if word[i] > word[i + 1]:
                word[i], word[i + 1] = word[i + 1], word[i]
                sign = -sign
    out: list[int] = []
    for j in word:
        if out and out[-1] == j:
            out.pop()
        else:
            out.append(j)
    return sign, tuple(out)


def word_trace_oracle(d: int, indices) -> complex:
    """Trace of a generator word in the irreducible representation, from the algebra alone.

    Only the empty word and the full ordered product ``s_1 ... s_d`` have
    nonzero trace in odd dimension.
    """
    size = 2 ** ((d - 1) // 2)
    sign, word = reduced_word(indices)
    if not word:
        return complex(sign * size)
    if word == tuple(range(1, d + 1)):
        return complex(sign * size * (-1j) ** ((d - 1) // 2))
    return 0j


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    n_cases: int
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def clifford_identity_suite(
    d: int, max_length: int | None = None, n_sampled: int | None = None, seed: int = 0, tol: float = 1e-10
) -> list[IdentityCheck]:
    """Representation invariants plus traces of generator words checked against the algebraic oracle.

    Words of length ``<= max_length`` (default ``d``) are enumerated exhaustively
    unless ``n_sampled`` is given, in which case that many random words and
    random permutations are drawn instead.
    """
    rep = build_clifford(d)
    max_length = d if max_length is None else max_length
    checks = [
        IdentityCheck("anticommutation", d * d, rep.anticommutator_residual(), 1e-12),
        IdentityCheck("hermiticity", d, rep.hermiticity_residual(), 1e-12),
        IdentityCheck("product convention", 1, rep.product_convention_residual(), tol),
    ]
    rng = np.random.default_rng(seed)
    if n_sampled is None:
        words = [w for q in range(1, max_length + 1) for w in product(range(1, d + 1), repeat=q)]
        perms = [tuple(p + 1 for p in perm) for perm in permutations(range(d))]
    else:
        words = [tuple(rng.integers(1, d + 1, size=rng.integers(1, max_length + 1))) for _ in range(n_sampled)]
        perms = [tuple(rng.permutation(d) + 1) for _ in range(n_sampled)]

    def worst(cases):
        return max((abs(clifford_trace_product(rep, w) - word_trace_oracle(d, w)) for w in cases), default=0.0)

    short_odd = [w for w in words if len(w) % 2 == 1 and len(w) < d]
    non_perm = [w for w in words if len(w) == d and sorted(w) != list(range(1, d + 1))]
    perm_err = max(
        abs(clifford_trace_product(rep, p) - (-2j) ** ((d - 1) // 2) * permutation_sign([i - 1 for i in p])) for p in perms
    )
    checks += [
        IdentityCheck("(i) ordered product trace", 1, abs(clifford_trace_product(rep, range(1, d + 1)) - rep.size * (-1j) ** ((d - 1) // 2)), tol),
        IdentityCheck("(ii) short odd words vanish", len(short_odd), max((abs(clifford_trace_product(rep, w)) for w in short_odd), default=0.0), tol),
        IdentityCheck("(iii) non-permutations vanish", len(non_perm), max((abs(clifford_trace_product(rep, w)) for w in non_perm), default=0.0), tol),
        IdentityCheck("(iv) permutation traces", len(perms), perm_err, tol),
        IdentityCheck("all words vs algebraic oracle", len(words), worst(words), tol),
    ]
    return checks


def random_simplex(rng: np.random.Generator, d: int, min_ratio: float = 0.1, scale: float = 1.0) -> np.ndarray:
    """Gaussian points ``x_1..x_d`` with ``|det| >= min_ratio * prod |x_i|``."""
    while True:
        pts = scale * rng.normal(size=(d, d))
        ratio = abs(np.linalg.det(pts)) / np.prod(np.linalg.norm(pts, axis=1))
        if ratio >= min_ratio:
            return pts
