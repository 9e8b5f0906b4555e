"""Gauge transformation: remove the non-resonant part of a perturbation order by order.

Two independent routes build the same objects:

* the symbol route keeps everything as lazy periodic symbols and evaluates
  coefficients at sample points;
* the matrix route works on a truncated fiber, where commutators become
  i(AP - PA) and the cutoff parts become entrywise masks.

Ψ is supported in the shell ρ/2 <= |ξ + θ/2| <= 3ρ/2, so once the truncation
radius exceeds 3ρ/2 + r every product that involves a Ψ factor is exact on
the index set and the two routes must agree entry by entry.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, DegenerateDenominator, InternalError
from .lattice import Lattice
from .symbols import (CutoffBank, Evaluation, FreeSymbol, LinComb, Part, PeriodicSymbol, ZeroSymbol,
                      estimate_norm, nested_commutator, norm_grid, part, tau_cart, theta_ball)
from .spectrum import FiberMatrix, IndexSet, h0_values, symbol_matrix

UNITARY_TOL = 1e-13
HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class GaugeConfig:
    M: int
    rho: float
    kappa: float
    m: float = 1.0
    alpha: float = 5 / 3
    beta: float = 0.6

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("gauge depth M must be at least 1")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.beta * (self.alpha - 2) < 2 * self.m - 2:
            raise ConfigError(
                f"smallness condition beta*(alpha - 2) < 2m - 2 violated: "
                f"{self.beta * (self.alpha - 2):.6g} >= {2 * self.m - 2:.6g}")
        if not self.sigma < 1:
            raise InternalError("sigma >= 1 although the smallness condition holds")

    @property
    def sigma(self) -> float:
        return self.alpha - (2 * self.m - 2) / self.beta - 1

    def sigma_j(self, j: int) -> float:
        return j * (self.sigma - 1) + 1

    def epsilon(self, j: int) -> float:
        return j * (self.sigma - 1) + (2 * self.m - 2) / self.beta + 2


class Remainder(NamedTuple):
    epsilon: float
    beta_epsilon: float
    scale: float  # ρ^{βε}


def remainder_exponent(config: GaugeConfig, j: int) -> Remainder:
    e = config.epsilon(j)
    return Remainder(e, config.beta * e, config.rho ** (config.beta * e))


# ---------------------------------------------------------------------------
# symbol route


class PsiSymbol(PeriodicSymbol):
    """ψ̂(θ, ξ) = i â^♮(θ, ξ) / τ_θ(ξ) for θ != 0, ψ̂(0, ·) = 0."""

    def __init__(self, nat: PeriodicSymbol, m: float, rho: float, beta: float):
        super().__init__(nat.lattice, alpha=0.0, beta=nat.beta)
        self.nat = nat
        self.m = m
        self.floor = 1e-12 * rho ** (2 * m - 2 + beta)

    def _support(self):
        return [t for t in self.nat.support if any(t)]

    def _eval(self, theta, ev, shift):
        num = ev.get(self.nat, theta, shift)
        tau = tau_cart(self.lattice.to_cart(theta), ev.points(shift), self.m)
        live = num != 0
        if np.any(live & (np.abs(tau) < self.floor)):
            raise DegenerateDenominator(
                f"|tau| below {self.floor:.3g} inside the support of the non-resonant part at theta={theta}")
        out = np.zeros(ev.n, dtype=complex)
        out[live] = 1j * num[live] / tau[live]
        return out


def solve_commutator_equation(a: PeriodicSymbol, params, bank: CutoffBank, m: float = 1.0) -> PeriodicSymbol:
    """ψ solving ad(h0; ψ) + a^♮ = 0."""
    nat = part(a, "nat", params, bank)
    if not nat.support:
        return ZeroSymbol(a.lattice)
    return PsiSymbol(nat, m, bank.rho, bank.beta)


def compositions(total: int, parts: int):
    """Ordered tuples of ``parts`` positive integers summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


class _NestCache:
    """ad(base; Ψ_{k1}, ..., Ψ_{kj}) with shared prefixes."""

    def __init__(self, base, commute: Callable, psi: dict):
        self.base = base
        self.commute = commute
        self.psi = psi
        self.memo: dict = {(): base}

    def get(self, ks: tuple):
        hit = self.memo.get(ks)
        if hit is None:
            hit = self.commute(self.get(ks[:-1]), self.psi[ks[-1]])
            self.memo[ks] = hit
        return hit


def _b_terms(l: int):
    for j in range(1, l):
        for ks in compositions(l - 1, j):
            yield 1.0 / math.factorial(j), ks


def _t_terms(l: int):
    for j in range(2, l + 1):
        for ks in compositions(l, j):
            yield 1.0 / math.factorial(j), ks


@dataclass
class GaugeSeries:
    config: GaugeConfig
    h0: PeriodicSymbol
    b: PeriodicSymbol
    psi: list  # ψ_1..ψ_M
    b_parts: dict  # l -> B_l, l = 1..M+1
    t_parts: dict  # l -> T_l, l = 2..M
    params: object
    bank: CutoffBank
    remainder_bound: float = math.nan
    norm_b: float = math.nan

    @property
    def x(self) -> PeriodicSymbol:
        terms = [(1.0, self.b_parts[l]) for l in range(1, self.config.M + 1)]
        terms += [(1.0, self.t_parts[l]) for l in range(2, self.config.M + 1)]
        return LinComb(terms)

    def rhs(self, l: int) -> PeriodicSymbol:
        if l == 1:
            return self.b_parts[1]
        return LinComb([(1.0, self.b_parts[l]), (1.0, self.t_parts[l])])

    def a1(self) -> PeriodicSymbol:
        """Assembled A1 without remainder: h0 + X_M - X_M^♮."""
        x = self.x
        return LinComb([(1.0, self.h0), (1.0, x), (-1.0, part(x, "nat", self.params, self.bank))])

    def a0(self) -> PeriodicSymbol:
        return LinComb([(1.0, self.h0), (1.0, part(self.x, "o", self.params, self.bank))])


def build_series(b: PeriodicSymbol, config: GaugeConfig, params, bank: CutoffBank,
                 with_bound: bool = True) -> GaugeSeries:
    if config.M < 1:
        raise ConfigError("gauge depth M must be at least 1")
    lat = b.lattice
    h0 = FreeSymbol(lat, config.m)
    psi: dict = {}
    from .symbols import Commutator
    bcache = _NestCache(b, Commutator, psi)
    hcache = _NestCache(h0, Commutator, psi)
    B = {1: b}
    T: dict = {}
    for l in range(1, config.M + 2):
        if l >= 2:
            B[l] = LinComb([(c, bcache.get(ks)) for c, ks in _b_terms(l)])
            if l <= config.M:
                T[l] = LinComb([(c, hcache.get(ks)) for c, ks in _t_terms(l)])
        if l <= config.M:
            rhs = B[l] if l == 1 else LinComb([(1.0, B[l]), (1.0, T[l])])
            psi[l] = solve_commutator_equation(rhs, params, bank, config.m)
    series = GaugeSeries(config, h0, b, [psi[l] for l in range(1, config.M + 1)], B, T, params, bank)
    if with_bound:
        nb = estimate_norm(b, 0, 0, norm_grid(config.rho, lat.dim, 12, 12)).value
        series.norm_b = nb
        series.remainder_bound = nb ** (config.M + 1) * remainder_exponent(config, config.M + 1).scale
    return series


def level_residual(series: GaugeSeries, l: int, thetas, xis: np.ndarray) -> tuple[float, float]:
    """(max |ad(h0; ψ_l)^ + (B_l + T_l)^♮^|, max |(B_l + T_l)^♮^|) over the samples.

    ``thetas`` pairs with rows of ``xis``.
    """
    from .symbols import Commutator
    lhs = Commutator(series.h0, series.psi[l - 1])
    nat = part(series.rhs(l), "nat", series.params, series.bank)
    thetas = [tuple(int(c) for c in t) for t in thetas]
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    worst = 0.0
    scale = 0.0
    groups: dict = {}
    for i, t in enumerate(thetas):
        groups.setdefault(t, []).append(i)
    for t, rows in groups.items():
        pts = xis[rows]
        a = lhs.coeff(t, pts)
        c = nat.coeff(t, pts)
        worst = max(worst, float(np.max(np.abs(a + c))))
        scale = max(scale, float(np.max(np.abs(c))))
    return worst, scale


# ---------------------------------------------------------------------------
# matrix route


def _offsets(index: IndexSet, mat: sp.spmatrix):
    coo = mat.tocoo()
    theta = index.coords[coo.row] - index.coords[coo.col]
    return coo, theta


def part_mask(index: IndexSet, mat: sp.spmatrix, kind: str, theta_r, bank: CutoffBank) -> sp.csr_matrix:
    """Entrywise version of a cutoff part: entry (m, n) is weighted at θ = m - n, ξ = n + k."""
    coo, theta = _offsets(index, mat)
    lat = index.lattice
    tc = lat.to_cart(theta)
    xi = index.points[coo.col]
    zero = ~np.any(theta, axis=1)
    small = np.zeros(len(theta), dtype=bool)
    allowed = {tuple(t) for t in theta_r.coords}
    if len(theta):
        uniq, inv = np.unique(theta, axis=0, return_inverse=True)
        small = np.array([tuple(u) in allowed for u in uniq.tolist()], dtype=bool)[inv.ravel()]
    w = np.zeros(len(theta))
    if kind == "o":
        w[zero] = 1.0
    elif kind == "up":
        w[~zero & ~small] = 1.0
    else:
        s = small
        if kind == "sharp":
            w[s] = bank.l_gt(tc[s], xi[s])
        elif kind == "down":
            w[s] = bank.l_lt(tc[s], xi[s])
        elif kind == "nat":
            w[s] = bank.phi(tc[s], xi[s]) * bank.e(tc[s], xi[s])
        elif kind == "flat":
            w[s] = bank.zeta(tc[s], xi[s]) * bank.e(tc[s], xi[s])
        else:
            raise ValueError(f"unknown part {kind!r}")
    out = sp.csr_matrix((coo.data * w, (coo.row, coo.col)), shape=mat.shape)
    out.eliminate_zeros()
    return out


def psi_matrix(index: IndexSet, nat: sp.spmatrix, m: float, rho: float, beta: float) -> sp.csr_matrix:
    """Entrywise ψ = i x^♮ / τ with τ = h0(m + k) - h0(n + k)."""
    coo = sp.coo_matrix(nat)
    h = h0_values(index.points, m)
    tau = h[coo.row] - h[coo.col]
    floor = 1e-12 * rho ** (2 * m - 2 + beta)
    if np.any(np.abs(tau) < floor):
        raise DegenerateDenominator("|tau| below the floor inside the support of the non-resonant part")
    return sp.csr_matrix((1j * coo.data / tau, (coo.row, coo.col)), shape=nat.shape)


def ad_matrix(a: sp.spmatrix, p: sp.spmatrix) -> sp.csr_matrix:
    out = (1j * (a @ p - p @ a)).tocsr()
    out.eliminate_zeros()
    return out


@dataclass
class MatrixSeries:
    index: IndexSet
    config: GaugeConfig
    h0: sp.csr_matrix
    b: sp.csr_matrix
    psi: list
    b_parts: dict
    t_parts: dict
    theta_r: object
    bank: CutoffBank

    def x(self) -> sp.csr_matrix:
        M = self.config.M
        out = sum((self.b_parts[l] for l in range(1, M + 1)), sp.csr_matrix(self.b.shape, dtype=complex))
        for l in range(2, M + 1):
            out = out + self.t_parts[l]
        return out.tocsr()

    def a1(self) -> sp.csr_matrix:
        x = self.x()
        nat = part_mask(self.index, x, "nat", self.theta_r, self.bank)
        return (self.h0 + x - nat).tocsr()

    def h(self) -> sp.csr_matrix:
        return (self.h0 + self.b).tocsr()

    def psi_total(self) -> sp.csr_matrix:
        return sum(self.psi[1:], self.psi[0]).tocsr()

    def rhs(self, l: int) -> sp.csr_matrix:
        return self.b_parts[1] if l == 1 else (self.b_parts[l] + self.t_parts[l]).tocsr()


def exactness_radius(rho: float, r: float) -> float:
    """Truncation radius beyond which the matrix route is exact on the index set."""
    return 1.5 * rho + r + 1.0


def build_matrix_series(b: PeriodicSymbol, config: GaugeConfig, params, bank: CutoffBank,
                        k, cutoff: float, check_exact: bool = True) -> MatrixSeries:
    lat = b.lattice
    theta_r = theta_ball(lat, params)
    if check_exact and cutoff < exactness_radius(config.rho, theta_r.r):
        raise ConfigError(f"cutoff {cutoff:g} is below the exactness radius "
                          f"{exactness_radius(config.rho, theta_r.r):g} of the matrix route")
    index = IndexSet(lat, k, cutoff)
    h0 = sp.diags(h0_values(index.points, config.m).astype(complex), format="csr")
    bm = symbol_matrix(b, index)
    psi: dict = {}
    bcache = _NestCache(bm, ad_matrix, psi)
    hcache = _NestCache(h0, ad_matrix, psi)
    B = {1: bm}
    T: dict = {}
    zero = sp.csr_matrix(bm.shape, dtype=complex)
    for l in range(1, config.M + 2):
        if l >= 2:
            B[l] = sum((c * bcache.get(ks) for c, ks in _b_terms(l)), zero).tocsr()
            if l <= config.M:
                T[l] = sum((c * hcache.get(ks) for c, ks in _t_terms(l)), zero).tocsr()
        if l <= config.M:
            rhs = B[1] if l == 1 else (B[l] + T[l]).tocsr()
            nat = part_mask(index, rhs, "nat", theta_r, bank)
            psi[l] = psi_matrix(index, nat, config.m, config.rho, config.beta)
    return MatrixSeries(index, config, h0, bm, [psi[l] for l in range(1, config.M + 1)], B, T,
                        theta_r, bank)


def matrix_level_residual(ms: MatrixSeries, l: int) -> tuple[float, float]:
    lhs = ad_matrix(ms.h0, ms.psi[l - 1])
    nat = part_mask(ms.index, ms.rhs(l), "nat", ms.theta_r, ms.bank)
    diff = lhs + nat
    return (float(abs(diff).max()) if diff.nnz else 0.0,
            float(abs(nat).max()) if nat.nnz else 0.0)


# ---------------------------------------------------------------------------
# conjugation


def conjugate_fiber(h: FiberMatrix | np.ndarray, psi: FiberMatrix | np.ndarray, tol: float = HERMITIAN_TOL):
    """U* H U with U = exp(iΨ). Returns the same kind of object it was given."""
    wrap = isinstance(h, FiberMatrix)
    H = h.dense() if wrap else np.asarray(h)
    P = psi.dense() if isinstance(psi, FiberMatrix) else (psi.toarray() if sp.issparse(psi) else np.asarray(psi))
    if H.shape != P.shape:
        raise ValueError("fiber and gauge matrices live on different index sets")
    scale = max(1.0, float(np.abs(H).max()))
    if np.abs(H - H.conj().T).max() > tol * scale:
        raise ValueError("fiber matrix is not Hermitian")
    if np.abs(P - P.conj().T).max() > tol * max(1.0, float(np.abs(P).max())):
        raise ValueError("gauge matrix is not Hermitian")
    if not np.any(P):
        out = H.copy()
    else:
        U = sla.expm(1j * P)
        err = np.abs(U.conj().T @ U - np.eye(len(U))).max()
        if err > UNITARY_TOL * max(1.0, len(U) ** 0.5):
            raise InternalError(f"exp(i psi) is not unitary to tolerance (defect {err:.3g})")
        out = U.conj().T @ H @ U
        out = 0.5 * (out + out.conj().T)
    if wrap:
        return h.with_matrix(out)
    return out


# ---------------------------------------------------------------------------
# reports shared by the CLI and the checks


def shell_samples(rng: np.random.Generator, n: int, d: int, rho: float) -> np.ndarray:
    """Uniform momenta in ρ/2 <= |ξ| <= 3ρ/2."""
    u = rng.uniform(size=n)
    lo, hi = 0.5 * rho, 1.5 * rho
    r = (lo ** d + u * (hi ** d - lo ** d)) ** (1.0 / d)
    v = rng.standard_normal(size=(n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r[:, None]


def residual_table(series: GaugeSeries, n_samples: int, seed: int, batch: int = 200) -> list[dict]:
    """Per-level sup of |ad(h0; ψ_l)^ + (B_l + T_l)^♮^| over random (θ, ξ) in the shell."""
    lat = series.b.lattice
    rng = np.random.default_rng(seed)
    theta = [t for t in theta_ball(lat, series.params).coords]
    rows = []
    for l in range(1, series.config.M + 1):
        worst = scale = 0.0
        done = 0
        while done < n_samples:
            n = min(batch, n_samples - done)
            xi = shell_samples(rng, n, lat.dim, series.config.rho)
            th = [theta[i] for i in rng.integers(0, len(theta), n)]
            w, s = level_residual(series, l, th, xi)
            worst, scale = max(worst, w), max(scale, s)
            done += n
        rows.append({"level": l, "residual": worst, "scale": scale,
                     "relative": worst / scale if scale > 0 else 0.0})
    return rows


def psi_norms(series: GaugeSeries, n_radial: int = 12, n_angular: int = 12) -> list[float]:
    grid = norm_grid(series.config.rho, series.b.lattice.dim, n_radial, n_angular)
    return [estimate_norm(p, 0, 0, grid).value if p.support else 0.0 for p in series.psi]


def epsilon_table(config: GaugeConfig, upto: int | None = None) -> list[dict]:
    out = []
    for j in range(1, (upto or config.M + 1) + 1):
        r = remainder_exponent(config, j)
        out.append({"j": j, "epsilon": r.epsilon, "beta_epsilon": r.beta_epsilon, "scale": r.scale})
    return out


def eigen_disagreement(b: PeriodicSymbol, configs: list, params, bank: CutoffBank, k, cutoff: float,
                       lo: float, hi: float) -> list[dict]:
    """Eigenvalue gap between assembled A1 (no remainder) and H = e^{iΨ}A1e^{-iΨ} + R on one truncation.

    Conjugation by the truncated e^{iΨ} is exact on the index set (Ψ never
    leaves it), so the spectrum of the conjugated H(k) is that of H(k) itself.
    Eigenvalues are paired by global index.
    """
    from .spectrum import FiberMatrix, eig_window
    out = []
    wh = None
    for cfg in configs:
        ms = build_matrix_series(b, cfg, params, bank, k, cutoff)
        if wh is None:
            wh = eig_window(FiberMatrix(ms.index.k, ms.index, ms.h()), lo, hi)
        wa = eig_window(FiberMatrix(ms.index.k, ms.index, ms.a1()), lo, hi)
        first = max(wh.first, wa.first)
        last = min(wh.first + len(wh.values), wa.first + len(wa.values))
        diffs = [abs(wh.values[j - wh.first] - wa.values[j - wa.first]) for j in range(first, last)]
        out.append({"M": cfg.M, "max_diff": max(diffs) if diffs else math.nan, "compared": len(diffs),
                    "size": len(ms.index), "count_shift": wa.first - wh.first})
    return out


def conjugation_invariance(b: PeriodicSymbol, config: GaugeConfig, params, bank: CutoffBank, k,
                           cutoff: float) -> float:
    """max |λ_j(U*HU) - λ_j(H)| / max |λ_j(H)| with U = exp(iΨ) on a small dense truncation."""
    ms = build_matrix_series(b, config, params, bank, k, cutoff, check_exact=False)
    H = ms.h().toarray()
    P = ms.psi_total().toarray()
    C = conjugate_fiber(H, P)
    e1 = sla.eigvalsh(H)
    e2 = sla.eigvalsh(C)
    return float(np.max(np.abs(e1 - e2)) / np.max(np.abs(e1)))


def model_matrix(ms: MatrixSeries) -> sp.csr_matrix:
    """H0 + X^o + X^♭: the resonant model built from the assembled series."""
    x = ms.x()
    o = part_mask(ms.index, x, "o", ms.theta_r, ms.bank)
    flat = part_mask(ms.index, x, "flat", ms.theta_r, ms.bank)
    return (ms.h0 + o + flat).tocsr()


def counting_sandwich(ms: MatrixSeries, mus, L: float = 1.0) -> list[dict]:
    """N(μ - ρ^{-L}; model) <= N(μ; A1) <= N(μ + ρ^{-L}; model) at each μ."""
    from .spectrum import inertia_count
    A = model_matrix(ms)
    A1 = ms.a1()
    eps = ms.config.rho ** (-L)
    rows = []
    for mu in np.atleast_1d(mus):
        lo, mid, hi = inertia_count(A, mu - eps), inertia_count(A1, mu), inertia_count(A, mu + eps)
        rows.append({"mu": float(mu), "lower": lo, "count": mid, "upper": hi, "holds": lo <= mid <= hi})
    return rows
