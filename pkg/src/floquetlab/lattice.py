"""Lattices, dual lattices, frequency balls and lattice subspaces.

Dual-lattice vectors are carried around as integer coordinates in the dual
basis (tuples of ints); ``Lattice.to_cart`` turns them into momenta.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InternalError, InvalidLattice

SUBSPACE_TOL = 1e-9


@dataclass(frozen=True)
class Lattice:
    basis: np.ndarray  # columns generate the primal lattice
    dual_basis: np.ndarray  # columns generate the dual lattice
    det: float

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def to_cart(self, coords) -> np.ndarray:
        """Integer dual coordinates (..., d) -> momenta (..., d)."""
        c = np.asarray(coords, dtype=float)
        return c @ self.dual_basis.T

    def primal_to_cart(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=float)
        return c @ self.basis.T

    def to_coords(self, xi) -> np.ndarray:
        """Momenta -> real coordinates in the dual basis."""
        return np.linalg.solve(self.dual_basis, np.asarray(xi, dtype=float).T).T

    @property
    def shortest_dual(self) -> float:
        pts = lattice_points_in_ball(self.dual_basis, self.cell_diameter(dual=True) + 1e-9)
        n = np.linalg.norm(pts @ self.dual_basis.T, axis=1)
        return float(n[n > 0].min())

    def cell_diameter(self, dual: bool = True) -> float:
        b = self.dual_basis if dual else self.basis
        corners = np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=float)
        pts = corners @ b.T
        return float(max(np.linalg.norm(p - q) for p in pts for q in pts))


def make_lattice(basis) -> Lattice:
    b = np.array(basis, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise InvalidLattice(f"basis must be a square matrix, got shape {b.shape}")
    det = abs(float(np.linalg.det(b)))
    scale = float(np.prod(np.linalg.norm(b, axis=0))) or 1.0
    if not np.isfinite(det) or det <= 1e-12 * scale:
        raise InvalidLattice("basis is singular")
    dual = 2.0 * np.pi * np.linalg.inv(b).T
    b.setflags(write=False)
    dual.setflags(write=False)
    return Lattice(b, dual, det)


def dual_of(lat: Lattice) -> Lattice:
    """The lattice generated by the dual basis (its dual is the original)."""
    return make_lattice(lat.dual_basis)


def lattice_points_in_ball(basis: np.ndarray, radius: float, center=None) -> np.ndarray:
    """Integer coordinates n with |basis @ n - center| <= radius."""
    basis = np.asarray(basis, dtype=float)
    d = basis.shape[0]
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    inv = np.linalg.inv(basis)
    c0 = inv @ c
    # |n_i - c0_i| <= radius * |row_i(inv)|
    half = radius * np.linalg.norm(inv, axis=1)
    lo = np.floor(c0 - half).astype(int)
    hi = np.ceil(c0 + half).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    pts = grid @ basis.T
    keep = np.linalg.norm(pts - c, axis=1) <= radius * (1 + 1e-12) + 1e-12
    return grid[keep]


def split_momentum(lat: Lattice, xi) -> tuple[np.ndarray, np.ndarray]:
    """Return (integer part as dual coordinates, fractional part as a momentum).

    The fractional part lies in the half-open cell spanned by the dual basis
    columns, anchored at 0. Works on a single vector or a stack (..., d).
    """
    xi = np.asarray(xi, dtype=float)
    c = lat.to_coords(xi)
    n = np.floor(c)
    frac_c = c - n
    # guard against 1.0 from rounding
    bump = frac_c >= 1.0
    n = n + bump
    n = n.astype(int)
    frac = xi - lat.to_cart(n)
    return n, frac


def torus_distance(lat: Lattice, eta) -> float:
    _, f = split_momentum(lat, eta)
    rad = float(np.linalg.norm(f)) + lat.cell_diameter(dual=True)
    pts = lat.to_cart(lattice_points_in_ball(lat.dual_basis, rad, center=f))
    return float(np.min(np.linalg.norm(f - pts, axis=1)))


# ---------------------------------------------------------------------------
# frequency balls


@dataclass(frozen=True)
class FrequencySet:
    r: float
    coords: tuple[tuple[int, ...], ...]
    vectors: np.ndarray
    with_zero: bool = False

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)

    def __contains__(self, theta) -> bool:
        return tuple(theta) in set(self.coords)


def _sort_key(coords: np.ndarray, cart: np.ndarray) -> np.ndarray:
    norms = np.round(np.linalg.norm(cart, axis=1), 12)
    keys = [coords[:, i] for i in reversed(range(coords.shape[1]))] + [norms]
    return np.lexsort(keys)


def enumerate_theta(lat: Lattice, r: float, with_zero: bool = False,
                    require_spanning: bool = False) -> FrequencySet:
    if r <= 0:
        raise ValueError("r must be positive")
    pts = lattice_points_in_ball(lat.dual_basis, r)
    cart = lat.to_cart(pts)
    nz = np.any(pts != 0, axis=1)
    if not with_zero:
        pts, cart = pts[nz], cart[nz]
    order = _sort_key(pts, cart)
    pts, cart = pts[order], cart[order]
    if require_spanning:
        nonzero = cart[np.any(pts != 0, axis=1)]
        rank = np.linalg.matrix_rank(nonzero) if len(nonzero) else 0
        if rank < lat.dim:
            raise InvalidLattice(
                f"r = {r:g} is below r0: the ball holds only {rank} independent "
                f"dual vectors, {lat.dim} are required")
    coords = tuple(tuple(int(v) for v in p) for p in pts)
    cart.setflags(write=False)
    return FrequencySet(float(r), coords, cart, with_zero)


# ---------------------------------------------------------------------------
# lattice subspaces


def _rref(rows: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    a = np.array(rows, dtype=float)
    nr, nc = a.shape
    piv_row = 0
    for col in range(nc):
        if piv_row >= nr:
            break
        p = piv_row + int(np.argmax(np.abs(a[piv_row:, col])))
        if abs(a[p, col]) < tol:
            continue
        a[[piv_row, p]] = a[[p, piv_row]]
        a[piv_row] /= a[piv_row, col]
        for i in range(nr):
            if i != piv_row:
                a[i] -= a[i, col] * a[piv_row]
        piv_row += 1
    return a[:piv_row]


@dataclass(frozen=True)
class LatticeSubspace:
    dim: int
    frame: np.ndarray  # (dim, d) orthonormal rows
    generators: tuple[tuple[int, ...], ...] = ()
    ambient: int = 0
    key: tuple = field(default=(), compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticeSubspace):
            return NotImplemented
        if self.dim != other.dim or self.ambient != other.ambient:
            return False
        if self.dim == 0:
            return True
        return bool(np.allclose(_rref(self.frame), _rref(other.frame), atol=SUBSPACE_TOL))

    def __hash__(self) -> int:
        return hash((self.dim, self.ambient, self.key))

    def __repr__(self) -> str:
        gens = ", ".join(str(g) for g in self.generators)
        return f"LatticeSubspace(dim={self.dim}, generators=[{gens}])"

    @property
    def projector(self) -> np.ndarray:
        return self.frame.T @ self.frame

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        res = v - project(self, v)
        return bool(np.linalg.norm(res) <= tol * max(1.0, float(np.linalg.norm(v))))

    def label(self) -> str:
        if self.dim == 0:
            return "X"
        if self.dim == self.ambient:
            return f"R{self.ambient}"
        return "span(" + ";".join(",".join(str(c) for c in g) for g in self.generators) + ")"


def _canonical_key(frame: np.ndarray) -> tuple:
    if frame.shape[0] == 0:
        return ()
    rr = _rref(frame)
    return tuple(np.round(rr, 7).ravel().tolist())


def make_subspace(lat: Lattice, generators: Sequence[Sequence[int]]) -> LatticeSubspace:
    """Span of the given dual vectors (integer coordinates)."""
    d = lat.dim
    gens = sorted({canonical_sign(g) for g in generators})
    if not gens:
        return LatticeSubspace(0, np.zeros((0, d)), (), d, ())
    cart = lat.to_cart(np.array(gens))
    order = _sort_key(np.array(gens), cart)
    frame: list[np.ndarray] = []
    used: list[tuple[int, ...]] = []
    for i in order:
        v = cart[i].copy()
        for q in frame:
            v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if nv > 1e-9 * max(1.0, np.linalg.norm(cart[i])):
            frame.append(v / nv)
            used.append(gens[i])
    f = np.array(frame)
    f.setflags(write=False)
    return LatticeSubspace(len(frame), f, tuple(used), d, _canonical_key(f))


def canonical_sign(theta) -> tuple:
    """Representative of ±θ whose first nonzero coordinate is positive."""
    t = tuple(int(c) for c in theta)
    for c in t:
        if c:
            return t if c > 0 else tuple(-x for x in t)
    return t


def zero_subspace(d: int) -> LatticeSubspace:
    return LatticeSubspace(0, np.zeros((0, d)), (), d, ())


def project(subspace: LatticeSubspace, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if subspace.dim == 0:
        return np.zeros_like(xi)
    return (xi @ subspace.frame.T) @ subspace.frame


@dataclass(frozen=True)
class SubspaceFamily:
    r: float
    by_dim: dict
    ambient: int

    @property
    def all(self) -> list[LatticeSubspace]:
        out = []
        for n in sorted(self.by_dim):
            out.extend(self.by_dim[n])
        return out

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_dim.values())


def enumerate_subspaces(lat: Lattice, theta: FrequencySet) -> SubspaceFamily:
    """All distinct spans of subsets of the frequency ball, grouped by dimension."""
    d = lat.dim
    vecs = [t for t in theta.coords if any(t)]
    by_dim: dict[int, list[LatticeSubspace]] = {0: [zero_subspace(d)]}
    layer: dict[tuple, LatticeSubspace] = {(): zero_subspace(d)}
    for n in range(1, d + 1):
        nxt: dict[tuple, LatticeSubspace] = {}
        for V in layer.values():
            for t in vecs:
                if V.dim and V.contains(lat.to_cart(t)):
                    continue
                W = make_subspace(lat, list(V.generators) + [t])
                if W.dim != n:
                    continue
                if W.key not in nxt:
                    # keep the generator set of all ball vectors lying in W
                    inside = [s for s in vecs if W.contains(lat.to_cart(s))]
                    nxt[W.key] = make_subspace(lat, inside)
        if not nxt:
            break
        by_dim[n] = sorted(nxt.values(), key=lambda s: s.generators)
        layer = nxt
    return SubspaceFamily(theta.r, by_dim, d)


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def orthogonal_search_bound(lat: Lattice, r: float) -> float:
    d = lat.dim
    return 2.0 * lat.det / unit_ball_volume(d - 1) * math.pi ** (1 - d) * r ** (d - 1)


def find_orthogonal_lattice_vector(lat: Lattice, subspace: LatticeSubspace,
                                   r: float | None = None) -> np.ndarray:
    """Shortest nonzero primal vector orthogonal to a codimension-one subspace."""
    d = lat.dim
    if subspace.dim != d - 1:
        raise ValueError("subspace must have dimension d - 1")
    if r is None:
        r = max(float(np.linalg.norm(lat.to_cart(g))) for g in subspace.generators) \
            if subspace.generators else lat.shortest_dual
    bound = orthogonal_search_bound(lat, r)
    pts = lattice_points_in_ball(lat.basis, bound)
    pts = pts[np.any(pts != 0, axis=1)]
    cart = lat.primal_to_cart(pts)
    norms = np.linalg.norm(cart, axis=1)
    ortho = np.abs(cart @ subspace.frame.T).max(axis=1) <= 1e-9 * np.maximum(1.0, norms)
    if not np.any(ortho):
        raise InternalError(
            f"no orthogonal lattice vector within the search bound {bound:.6g}")
    cand, cn = cart[ortho], norms[ortho]
    best = cand[np.isclose(cn, cn.min(), rtol=1e-12)]
    # canonical sign: first nonzero coordinate positive, then lexicographic
    fixed = []
    for g in best:
        nz = np.flatnonzero(np.abs(g) > 1e-12)
        fixed.append(g if g[nz[0]] > 0 else -g)
    fixed.sort(key=lambda v: tuple(-v))
    return fixed[0] + 0.0


def iter_coords(items: Iterable) -> list[tuple[int, ...]]:
    return [tuple(int(c) for c in t) for t in items]
