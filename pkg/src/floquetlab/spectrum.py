"""Fiber operators, counting functions, cluster matrices, g and band overlap.

Fiber matrices are stored sparse. Small ones are diagonalized densely; large
ones are handled by shift-and-invert around a target energy, and global
eigenvalue indices come from an inertia count (number of negative pivots of a
symmetric factorization of H - μ).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import InternalError, SizeCapError
from .lattice import Lattice, lattice_points_in_ball, split_momentum
from .resonance import (CongruenceClass, Geometry, congruence_class, class_is_critical,
                        resolve_critical, sphere_threshold, in_sphere_S)
from .symbols import CutoffBank, FreeSymbol, LinComb, PeriodicSymbol, part

DENSE_CAP = 20_000
SPARSE_CAP = 200_000
DENSE_SWITCH = 800  # below this many plane waves, dense eigvalsh is cheaper


# ---------------------------------------------------------------------------
# index sets


class IndexSet:
    """Dual lattice points m with |m + k| <= cutoff, sorted by (|m+k|, coords)."""

    def __init__(self, lattice: Lattice, k, cutoff: float, cap: int = SPARSE_CAP):
        self.lattice = lattice
        self.k = np.asarray(k, dtype=float).reshape(lattice.dim)
        self.cutoff = float(cutoff)
        est = _ball_count_estimate(lattice, cutoff)
        if est > 1.2 * cap:
            raise SizeCapError(f"cutoff {cutoff:g} gives about {est:.0f} plane waves (cap {cap})")
        coords = lattice_points_in_ball(lattice.dual_basis, cutoff, center=-self.k)
        pts = lattice.to_cart(coords) + self.k
        norms = np.round(np.linalg.norm(pts, axis=1), 12)
        keys = [coords[:, i] for i in reversed(range(lattice.dim))] + [norms]
        order = np.lexsort(keys)
        self.coords = coords[order]
        self.points = pts[order]
        if len(self.coords) > cap:
            raise SizeCapError(f"cutoff {cutoff:g} gives {len(self.coords)} plane waves (cap {cap})")
        self._lo = self.coords.min(axis=0) - 64 if len(self.coords) else np.zeros(lattice.dim, int)
        span = (self.coords.max(axis=0) + 64 - self._lo + 1) if len(self.coords) else np.ones(lattice.dim, int)
        self._radix = np.cumprod(np.concatenate([[1], span[:-1]])).astype(np.int64)
        self._span = span
        enc = self._encode(self.coords)
        self._order = np.argsort(enc)
        self._sorted = enc[self._order]

    def __len__(self) -> int:
        return len(self.coords)

    def _encode(self, c: np.ndarray) -> np.ndarray:
        return ((np.asarray(c) - self._lo) * self._radix).sum(axis=-1)

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Row index of each coordinate vector, -1 where absent."""
        c = np.atleast_2d(np.asarray(coords))
        inside = np.all((c >= self._lo) & (c < self._lo + self._span), axis=1)
        out = np.full(len(c), -1, dtype=np.int64)
        if not np.any(inside):
            return out
        enc = self._encode(c[inside])
        pos = np.searchsorted(self._sorted, enc)
        pos = np.minimum(pos, len(self._sorted) - 1)
        hit = self._sorted[pos] == enc
        idx = np.full(len(enc), -1, dtype=np.int64)
        idx[hit] = self._order[pos[hit]]
        out[inside] = idx
        return out


def _ball_count_estimate(lat: Lattice, radius: float) -> float:
    d = lat.dim
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius ** d
    cell = (2 * math.pi) ** d / lat.det
    return vol / cell


# ---------------------------------------------------------------------------
# fiber matrices


def symbol_matrix(sym: PeriodicSymbol, index: IndexSet) -> sp.csr_matrix:
    """Entries dc^{-1/2} b̂(m - n, n + k) on the index set."""
    n = len(index)
    if not sym.support:
        return sp.csr_matrix((n, n), dtype=complex)
    coeffs = sym.coeffs(index.points)
    rows, cols, vals = [], [], []
    for th, c in coeffs.items():
        tgt = index.lookup(index.coords + np.asarray(th))
        ok = tgt >= 0
        rows.append(tgt[ok])
        cols.append(np.flatnonzero(ok))
        vals.append(np.asarray(c)[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals) / sym.sqrt_dc
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def h0_values(points: np.ndarray, m: float) -> np.ndarray:
    s = np.einsum("ij,ij->i", points, points)
    return s if m == 1 else s ** m


@dataclass
class FiberMatrix:
    k: np.ndarray
    index: IndexSet
    matrix: sp.csr_matrix
    m: float = 1.0
    diagonal_only: bool = False

    @property
    def size(self) -> int:
        return len(self.index)

    def dense(self) -> np.ndarray:
        if self.size > DENSE_CAP:
            raise SizeCapError(f"{self.size} plane waves exceed the dense cap {DENSE_CAP}")
        return self.matrix.toarray()

    def hermitian_defect(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(abs(diff).max()) if diff.nnz else 0.0

    def with_matrix(self, matrix) -> "FiberMatrix":
        mat = sp.csr_matrix(matrix)
        return FiberMatrix(self.k, self.index, mat, self.m, mat.nnz == np.count_nonzero(mat.diagonal()))


def build_fiber(lattice: Lattice, sym: PeriodicSymbol | None, k, cutoff: float, m: float = 1.0,
                cap: int | None = None) -> FiberMatrix:
    """H(k) = h0(n + k) δ_mn + dc^{-1/2} b̂(m - n, n + k), truncated at |m + k| <= cutoff.

    Diagonal problems may go up to the sparse cap; anything with a nonzero
    symbol is held to the same cap but dense work on it is refused above
    ``DENSE_CAP``.
    """
    index = IndexSet(lattice, k, cutoff, cap or SPARSE_CAP)
    diag = sp.diags(h0_values(index.points, m).astype(complex), format="csr")
    if sym is None or not sym.support:
        return FiberMatrix(index.k, index, diag, m, True)
    mat = (diag + symbol_matrix(sym, index)).tocsr()
    fib = FiberMatrix(index.k, index, mat, m, False)
    # sanity: far from the origin the diagonal dominates the perturbation
    far = index.points[-1:]
    if len(far) and cutoff > 4:
        row = abs(mat[len(index) - 1]).sum() - abs(mat[len(index) - 1, len(index) - 1])
        if row > 0.5 * h0_values(far, m)[0]:
            raise InternalError("perturbation is not dominated by h0 at the truncation edge")
    return fib


def fiber_from_symbols(lattice: Lattice, k, cutoff: float, m: float,
                       parts: Sequence[PeriodicSymbol]) -> FiberMatrix:
    sym = LinComb([(1.0, p) for p in parts]) if parts else None
    return build_fiber(lattice, sym, k, cutoff, m)


# ---------------------------------------------------------------------------
# eigenvalues and counting


def eigenvalues(fib: FiberMatrix) -> np.ndarray:
    if fib.diagonal_only:
        return np.sort(fib.matrix.diagonal().real)
    return sla.eigvalsh(fib.dense())


def inertia_count(matrix: sp.spmatrix, mu: float) -> int:
    """#{eigenvalues <= μ} from the pivots of a symmetric-mode LU of A - μ."""
    n = matrix.shape[0]
    a = (matrix - mu * sp.identity(n, format="csc")).tocsc()
    lu = spl.splu(a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise InternalError("symmetric factorization pivoted off the diagonal")
    d = lu.U.diagonal().real
    return int(np.count_nonzero(d < 0) + np.count_nonzero(d == 0))


def counting(fib: FiberMatrix, lam: float) -> int:
    """N(λ, H(k)) = #{j: λ_j <= λ}."""
    if fib.diagonal_only:
        return int(np.count_nonzero(fib.matrix.diagonal().real <= lam))
    if fib.size <= DENSE_SWITCH:
        return int(np.count_nonzero(eigenvalues(fib) <= lam))
    return inertia_count(fib.matrix, lam)


@dataclass(frozen=True)
class Window:
    lo: float
    hi: float
    values: np.ndarray
    first: int  # global index (0-based) of values[0] = number of eigenvalues < lo


def eig_window(fib: FiberMatrix, lo: float, hi: float) -> Window:
    """All eigenvalues in [lo, hi] together with their global position."""
    if fib.diagonal_only or fib.size <= DENSE_SWITCH:
        ev = eigenvalues(fib)
        sel = (ev >= lo) & (ev <= hi)
        return Window(lo, hi, ev[sel], int(np.count_nonzero(ev < lo)))
    below = inertia_count(fib.matrix, np.nextafter(lo, -np.inf))
    upto = inertia_count(fib.matrix, hi)
    want = upto - below
    if want == 0:
        return Window(lo, hi, np.zeros(0), below)
    center = 0.5 * (lo + hi)
    nev = min(want + 6, fib.size - 2)
    for _ in range(6):
        vals = spl.eigsh(fib.matrix.tocsc(), k=nev, sigma=center, which="LM",
                         return_eigenvectors=False, tol=1e-13)
        vals = np.sort(vals.real)
        inside = vals[(vals >= lo) & (vals <= hi)]
        if len(inside) == want:
            return Window(lo, hi, inside, below)
        if nev >= fib.size - 2:
            break
        nev = min(2 * nev, fib.size - 2)
    raise InternalError(f"window [{lo}, {hi}] holds {want} eigenvalues by inertia but the "
                        f"shift-invert solver found {len(inside)}")


def truncation_shift(lattice: Lattice, sym: PeriodicSymbol | None, k, cutoff: float, m: float,
                     lo: float, hi: float) -> float:
    """Max eigenvalue shift over [lo, hi] when the cutoff grows by 25%."""
    a = eig_window(build_fiber(lattice, sym, k, cutoff, m), lo, hi)
    b = eig_window(build_fiber(lattice, sym, k, 1.25 * cutoff, m), lo - 1, hi + 1)
    shift = 0.0
    for j, v in enumerate(a.values):
        g = a.first + j - b.first
        if 0 <= g < len(b.values):
            shift = max(shift, abs(v - b.values[g]))
        else:
            shift = math.inf
    return shift


def k_grid(lattice: Lattice, n: int) -> np.ndarray:
    """Uniform n^d grid over the dual fundamental cell (cell-centred)."""
    d = lattice.dim
    ax = (np.arange(n) + 0.5) / n
    c = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return c @ lattice.dual_basis.T


def map_parallel(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# cluster matrices and the labeling function


@dataclass(frozen=True)
class ClusterMatrix:
    mu: np.ndarray
    shifts: np.ndarray
    entries: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        if len(self.shifts) == 1:
            return np.array([self.entries[0, 0].real])
        return sla.eigvalsh(self.entries)


class ModelSymbol:
    """a = h0 + x^o + x^♭, the symbol of the model operator A."""

    def __init__(self, geom: Geometry, x: PeriodicSymbol | None, m: float = 1.0,
                 bank: CutoffBank | None = None):
        self.geom = geom
        self.lattice = geom.lattice
        self.m = float(m)
        self.bank = bank or CutoffBank(geom.rho, geom.params.beta)
        self.h0 = FreeSymbol(self.lattice, m)
        if x is None:
            self.pert = None
        else:
            self.pert = LinComb([(1.0, part(x, "o", geom, self.bank)),
                                 (1.0, part(x, "flat", geom, self.bank))])
            if not self.pert.support:
                self.pert = None
        self.sqrt_dc = math.sqrt(self.lattice.det)

    def diagonal(self, pts: np.ndarray) -> np.ndarray:
        out = h0_values(pts, self.m).astype(float)
        if self.pert is not None:
            z = (0,) * self.lattice.dim
            if z in self.pert.support_set:
                out = out + self.pert.coeff(z, pts).real / self.sqrt_dc
        return out

    def row_bound(self, pts: np.ndarray) -> float:
        """max over pts of Σ_θ |x̂(θ, ξ)| / √dc, a bound on the perturbation per row."""
        if self.pert is None:
            return 0.0
        tot = np.zeros(len(pts))
        for th, c in self.pert.coeffs(pts).items():
            tot += np.abs(c)
        return float(tot.max(initial=0.0)) / self.sqrt_dc


def cluster_matrix(mu, model: ModelSymbol, shifts: np.ndarray | None = None) -> ClusterMatrix:
    """𝒜_{mn}(μ) = dc^{-1/2} â(m - n, μ + n) over the shift set of Υ(μ)."""
    mu = np.asarray(mu, dtype=float)
    lat = model.lattice
    if shifts is None:
        shifts = congruence_class(mu, model.geom).shifts
    shifts = np.asarray(shifts, dtype=int).reshape(-1, lat.dim)
    pts = mu + lat.to_cart(shifts)
    n = len(shifts)
    mat = np.diag(h0_values(pts, model.m).astype(complex))
    if model.pert is not None:
        pos = {tuple(s): i for i, s in enumerate(shifts.tolist())}
        coeffs = model.pert.coeffs(pts)
        for th, c in coeffs.items():
            for j, s in enumerate(shifts.tolist()):
                i = pos.get(tuple(a + b for a, b in zip(s, th)))
                if i is not None:
                    mat[i, j] += c[j] / model.sqrt_dc
    return ClusterMatrix(mu, shifts, mat)


def label_order(points: np.ndarray) -> np.ndarray:
    """Order of class points by (|η|, then lexicographic coordinates)."""
    norms = np.round(np.linalg.norm(points, axis=1), 10)
    keys = [np.round(points[:, i], 10) for i in reversed(range(points.shape[1]))] + [norms]
    return np.lexsort(keys)


class BandFunction:
    """The global labeling function g built from cluster eigenvalues.

    The ℓ-th point of a class (ordered by |η| then coordinates) receives the
    ℓ-th smallest eigenvalue of its cluster matrix.
    """

    def __init__(self, model: ModelSymbol):
        self.model = model
        self.geom = model.geom
        self.lattice = model.lattice
        self._memo: dict = {}

    def _class_values(self, xi) -> tuple[CongruenceClass, np.ndarray]:
        cls = congruence_class(xi, self.geom)
        key = tuple(np.round(cls.points[label_order(cls.points)[0]], 9))
        hit = self._memo.get(key)
        if hit is None:
            ev = cluster_matrix(xi, self.model, cls.shifts).eigenvalues()
            order = label_order(cls.points)
            vals = np.empty(len(ev))
            vals[order] = np.sort(ev)
            pts = cls.points
            hit = (pts, vals)
            self._memo[key] = hit
        return cls, hit

    def label(self, xi) -> int:
        cls = congruence_class(xi, self.geom)
        order = label_order(cls.points)
        zero = int(np.flatnonzero(~np.any(cls.shifts, axis=1))[0])
        return int(np.flatnonzero(order == zero)[0]) + 1

    def value(self, xi, nudge: bool = True) -> float:
        xi = np.asarray(xi, dtype=float)
        if nudge:
            xi = resolve_critical(xi, self.geom)
        cls, (pts, vals) = self._class_values(xi)
        i = int(np.argmin(np.linalg.norm(pts - xi, axis=1)))
        return float(vals[i])

    def values(self, xis: np.ndarray) -> np.ndarray:
        """g at many points; points in no layer take the 1×1 fast path."""
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        tc = self.geom.half_cart
        widths = self.geom.width * np.linalg.norm(tc, axis=1)
        in_any = np.any(np.abs(xis @ tc.T) < widths, axis=1)
        out = np.empty(len(xis))
        single = ~in_any
        if np.any(single):
            out[single] = self.model.diagonal(xis[single])
        for i in np.flatnonzero(in_any):
            out[i] = self.value(xis[i], nudge=False)
        return out

    def class_values(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """(points of Υ(ξ), g at each of them)."""
        _, (pts, vals) = self._class_values(np.asarray(xi, dtype=float))
        return pts, vals

    # -- spectrum of A(k) through the bijection J
    def perturbation_bound(self, radius: float) -> float:
        if self.model.pert is None:
            return 0.0
        d = self.lattice.dim
        rng = np.random.default_rng(12345)
        u = rng.normal(size=(4000, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = radius * rng.uniform(0.0, 1.0, size=(4000, 1)) ** (1.0 / d)
        pts = np.concatenate([u * r, u * radius])
        return 1.5 * self.model.row_bound(pts)

    def fiber_window(self, k, lo: float, hi: float) -> Window:
        """Eigenvalues of the model fiber A(k) in [lo, hi] via g(m + k)."""
        m = self.model.m
        top = max(hi, 1.0)
        rad = top ** (1 / (2 * m))
        C = self.perturbation_bound(2 * rad + 10)
        rmax = (top + C) ** (1 / (2 * m)) + 1e-9
        rmin2 = lo - C
        idx = IndexSet(self.lattice, k, rmax)
        h = h0_values(idx.points, m)
        sure_below = h < rmin2
        cand = ~sure_below
        g = self.values(idx.points[cand])
        first = int(np.count_nonzero(sure_below) + np.count_nonzero(g < lo))
        vals = np.sort(g[(g >= lo) & (g <= hi)])
        return Window(lo, hi, vals, first)


# ---------------------------------------------------------------------------
# band overlap


@dataclass(frozen=True)
class OverlapReport:
    lam: float
    zeta: float
    k_min: np.ndarray | None
    k_max: np.ndarray | None
    band: int | None
    capped: bool
    diagnostic: str = ""

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "zeta": self.zeta,
            "k_min": None if self.k_min is None else self.k_min.tolist(),
            "k_max": None if self.k_max is None else self.k_max.tolist(),
            "band": self.band,
            "capped": self.capped,
            "diagnostic": self.diagnostic,
        }


def overlap_from_windows(lam: float, ks: np.ndarray, windows: Sequence[Window]) -> OverlapReport:
    """Exact grid value of sup{t: min_k N(λ+t) < max_k N(λ-t)} from per-k windows.

    For band j the constraint holds while λ - t >= min_k λ_j and λ + t < max_k λ_j,
    so ζ = max_j min(λ - min_k λ_j, max_k λ_j - λ), clipped at 0. Bands not
    fully seen inside a window only give a lower bound, flagged as ``capped``.
    """
    lo = {}
    hi = {}
    for kk, w in zip(ks, windows):
        for i, v in enumerate(w.values):
            j = w.first + i
            if j not in lo or v < lo[j][0]:
                lo[j] = (v, kk)
            if j not in hi or v > hi[j][0]:
                hi[j] = (v, kk)
    best, arg = 0.0, None
    for j in lo:
        t = min(lam - lo[j][0], hi[j][0] - lam)
        if t > best:
            best, arg = t, j
    half = min(min(lam - w.lo, w.hi - lam) for w in windows)
    capped = best >= half
    if arg is None:
        return OverlapReport(lam, 0.0, None, None, None, False,
                             "lambda lies in a spectral gap at this grid resolution")
    return OverlapReport(lam, float(min(best, half)), np.asarray(lo[arg][1]), np.asarray(hi[arg][1]),
                         int(arg) + 1, bool(capped))


def band_overlap(lattice: Lattice, sym: PeriodicSymbol | None, lam: float, ks: np.ndarray,
                 cutoff: float, m: float = 1.0, half_window: float | None = None,
                 threads: int = 1) -> OverlapReport:
    if lam > (cutoff / 2) ** (2 * m) * (1 + 1e-12):
        raise ValueError(f"cutoff {cutoff:g} is too small for lambda = {lam:g}")
    W = half_window if half_window is not None else max(1.0, 0.002 * lam)

    def one(k):
        return eig_window(build_fiber(lattice, sym, k, cutoff, m), lam - W, lam + W)

    windows = map_parallel(one, list(ks), threads)
    return overlap_from_windows(lam, np.asarray(ks), windows)


def zeta_bisect(count: Callable[[float, int], int], lam: float, n_k: int, t_max: float,
                rel: float = 1e-6) -> float:
    """ζ by bisection on t using the counting functions ``count(λ, k_index)``."""

    def holds(t: float) -> bool:
        return min(count(lam + t, i) for i in range(n_k)) < max(count(lam - t, i) for i in range(n_k))

    if not holds(0.0):
        return 0.0
    a, b = 0.0, t_max
    if holds(b):
        return b
    while b - a > rel * max(b, 1e-300):
        c = 0.5 * (a + b)
        if holds(c):
            a = c
        else:
            b = c
    return a


# ---------------------------------------------------------------------------
# simple intervals


def interval_I(omega, rho: float, delta: float, band: BandFunction, tol: float = 1e-10) -> tuple:
    """[t-, t+] with ρ^{2m} - δ <= g(tΩ) <= ρ^{2m} + δ, by bracketing and bisection."""
    omega = np.asarray(omega, dtype=float)
    omega = omega / np.linalg.norm(omega)
    m = band.model.m
    target = rho ** (2 * m)
    if delta > target / 4:
        raise ValueError("delta must not exceed rho^{2m}/4")

    def g(t):
        return band.value(t * omega)

    def solve(level):
        a = (max(level, 0.0)) ** (1 / (2 * m)) * 0.9
        b = (level) ** (1 / (2 * m)) * 1.1
        ga, gb = g(a), g(b)
        while ga > level:
            a *= 0.95
            ga = g(a)
        while gb < level:
            b *= 1.05
            gb = g(b)
        while b - a > tol * b:
            c = 0.5 * (a + b)
            gc = g(c)
            if gc < level:
                a, ga = c, gc
            else:
                b, gb = c, gc
        return 0.5 * (a + b)

    t1, t2 = solve(target - delta), solve(target + delta)
    if not t1 <= t2:
        raise InternalError("g is not increasing along the ray; parameters outside validity")
    ts = np.linspace(t1, t2, 9)
    gs = np.array([g(t) for t in ts])
    if np.any(np.diff(gs) <= 0):
        raise InternalError("g is not increasing along the ray; parameters outside validity")
    return float(t1), float(t2)


@dataclass
class DirectionResult:
    omega: np.ndarray | None
    interval: tuple | None
    tried: int
    witnesses: list = field(default_factory=list)
    reason: str = ""


def simplicity_gap(band: BandFunction, xi, width: float) -> float:
    """Distance from g(ξ) to the nearest other eigenvalue of the model fiber A({ξ})."""
    xi = np.asarray(xi, dtype=float)
    n, k = split_momentum(band.lattice, xi)
    val = band.value(xi, nudge=False)
    w = band.fiber_window(k, val - width, val + width)
    diffs = np.abs(w.values - val)
    i = int(np.argmin(diffs))
    rest = np.delete(w.values, i)
    return float(np.min(np.abs(rest - val))) if len(rest) else width


def find_simple_direction(rho: float, delta: float, band: BandFunction, budget: int = 32,
                          t_samples: int = 7, seed: int = 0, tol: float | None = None,
                          directions: np.ndarray | None = None) -> DirectionResult:
    """First Ω ∈ T(ρ) along whose interval I(Ω) every sampled g(tΩ) is simple."""
    geom = band.geom
    d = band.lattice.dim
    m = band.model.m
    tol = tol if tol is not None else 1e-8 * rho ** (2 * m)
    if directions is None:
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(budget, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    inS = in_sphere_S(dirs, geom)
    if np.all(inS):
        return DirectionResult(None, None, 0, [],
                               f"T(rho) is empty at this sample: every direction lies within "
                               f"{sphere_threshold(geom):.3g} of a resonant normal")
    res = DirectionResult(None, None, 0)
    width = max(10 * tol, 1.0)
    for om in dirs[~inS]:
        res.tried += 1
        t1, t2 = interval_I(om, rho, delta, band)
        worst = math.inf
        for t in np.linspace(t1, t2, t_samples):
            worst = min(worst, simplicity_gap(band, t * om, width))
        if worst > tol:
            res.omega, res.interval = om, (t1, t2)
            return res
        res.witnesses.append({"omega": om.tolist(), "min_gap": worst})
    res.reason = "no sampled direction had a simple interval"
    return res


# ---------------------------------------------------------------------------
# Lipschitz and radial diagnostics


def radial_slopes(mu, band: BandFunction, t1: float, t2: float, V) -> np.ndarray:
    """Per-eigenvalue slopes of λ_j(𝒜(μ_V + t n(ν))) between t1 and t2."""
    mu = np.asarray(mu, dtype=float)
    P = V.projector
    mv = P @ mu
    nu = mu - mv
    nrm = float(np.linalg.norm(nu))
    if nrm == 0:
        raise ValueError("μ has no component orthogonal to V")
    n = nu / nrm
    shifts = congruence_class(mu, band.geom).shifts
    e1 = cluster_matrix(mv + t1 * n, band.model, shifts).eigenvalues()
    e2 = cluster_matrix(mv + t2 * n, band.model, shifts).eigenvalues()
    return (e2 - e1) / (t2 - t1)


def lipschitz_ratios(lattice: Lattice, sym: PeriodicSymbol | None, rho: float, m: float = 1.0,
                     n_pairs: int = 4, seed: int = 0, eta_max: float = 0.02, half_window: float = 1.0,
                     cutoff: float | None = None, threads: int = 1) -> np.ndarray:
    """|λ_j(H(k+η)) - λ_j(H(k))| / (|η|_T ρ^{2m-1}) for eigenvalues near ρ^{2m}.

    Eigenvalues are paired by global index, so crossings are handled the same
    way the ordered λ_j are.
    """
    from .lattice import torus_distance
    rng = np.random.default_rng(seed)
    lam = rho ** (2 * m)
    scale = rho ** (2 * m - 1)
    # plane waves past ρ + 8 sit at least 16mρ^{2m-1} above the window
    cut = cutoff if cutoff is not None else rho + 8
    d = lattice.dim
    jobs = []
    for _ in range(n_pairs):
        k = lattice.to_cart(rng.uniform(0, 1, d))
        u = rng.normal(size=d)
        eta = u / np.linalg.norm(u) * rng.uniform(0.25, 1.0) * eta_max
        jobs.append((k, eta))

    def one(job):
        k, eta = job
        a = eig_window(build_fiber(lattice, sym, k, cut, m), lam - half_window, lam + half_window)
        reach = half_window + 3.0 * scale * float(np.linalg.norm(eta))
        b = eig_window(build_fiber(lattice, sym, k + eta, cut, m), lam - reach, lam + reach)
        dist = torus_distance(lattice, eta)
        out = []
        for i, v in enumerate(a.values):
            j = a.first + i - b.first
            if not 0 <= j < len(b.values):
                raise InternalError("partner eigenvalue left the comparison window")
            out.append(abs(b.values[j] - v) / (dist * scale))
        return out

    res = map_parallel(one, jobs, threads)
    return np.array([r for rs in res for r in rs])


def radial_ratios(band: BandFunction, n_classes: int = 10, seed: int = 0,
                  spread: float = 0.05) -> np.ndarray:
    """Radial slopes / ρ^{2m-1} on resonant rays through one-dimensional zones.

    μ is drawn near |μ| = ρ inside a layer; the ray leaves μ_V along ν and is
    sampled at t0 and (1 + spread) t0.
    """
    from .resonance import classify
    geom = band.geom
    rho = geom.rho
    m = band.model.m
    rng = np.random.default_rng(seed)
    out = []
    tries = 0
    cand = [V for V in geom.resonant_subspaces if V.dim == geom.d - 1 and V.dim >= 1]
    while len(out) < n_classes * 1 and tries < 200 * n_classes:
        tries += 1
        V = cand[rng.integers(len(cand))]
        # point with |μ_V| well inside the layer and |μ| ≈ ρ
        along = V.frame[0] * rng.uniform(-0.5, 0.5) * rho ** geom.alpha_of(1)
        perp = rng.normal(size=geom.d)
        perp -= V.projector @ perp
        perp /= np.linalg.norm(perp)
        mu = along + perp * rho * rng.uniform(0.95, 1.05)
        mu = resolve_critical(mu, geom)
        lab = classify(mu, geom)
        if lab.subspace != V:
            continue
        t0 = float(np.linalg.norm(mu - V.projector @ mu))
        s = radial_slopes(mu, band, t0, (1 + spread) * t0, V)
        out.append(s / rho ** (2 * m - 1))
    if not out:
        raise InternalError("no resonant sample found on a one-dimensional zone")
    return np.concatenate(out)
