"""Periodic symbols as finite Fourier families over the dual lattice.

A symbol is b(x, ξ) = dc^{-1/2} Σ_θ b̂(θ, ξ) e^{iθ·x} with finitely many θ.
Symbols form a lazy expression graph: products, commutators and cutoff parts
only record their operands, and coefficients are pulled on demand through an
``Evaluation`` context that memoizes per (node, θ, lattice shift) over one
batch of base momenta. Lattice shifts are what the product formula needs
(b̂(θ, ξ+φ)), so every intermediate value lives on the batch shifted by an
integer dual vector and gets reused across the whole graph.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateDenominator
from .expr import compile_coeff
from .lattice import FrequencySet, Lattice, LatticeSubspace, enumerate_theta

Theta = tuple  # integer dual coordinates

_uid = itertools.count()


def _add(a: Theta, b: Theta) -> Theta:
    return tuple(x + y for x, y in zip(a, b))


def _neg(a: Theta) -> Theta:
    return tuple(-x for x in a)


# ---------------------------------------------------------------------------
# smooth cutoffs


def _f(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def iota(z):
    """Smooth step: 1 for z <= 1/4, 0 for z >= 1/2, symmetric about 3/8."""
    z = np.asarray(z, dtype=float)
    a = _f(0.5 - z)
    b = _f(z - 0.25)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffBank:
    rho: float
    beta: float

    @property
    def L(self) -> float:
        return self.rho ** self.beta

    def _mid(self, theta_cart, xi):
        return np.linalg.norm(np.asarray(xi) + 0.5 * np.asarray(theta_cart), axis=-1)

    def e(self, theta_cart, xi):
        return iota(np.abs(self._mid(theta_cart, xi) / self.rho - 1.0))

    def l_gt(self, theta_cart, xi):
        return 1.0 - iota(self._mid(theta_cart, xi) / self.rho - 1.0)

    def l_lt(self, theta_cart, xi):
        return 1.0 - iota(1.0 - self._mid(theta_cart, xi) / self.rho)

    def zeta(self, theta_cart, xi, L: float | None = None):
        L = self.L if L is None else L
        th = np.asarray(theta_cart, dtype=float)
        nt = np.linalg.norm(th, axis=-1)
        proj = np.abs(np.sum((np.asarray(xi) + 0.5 * th) * th, axis=-1))
        return iota(proj / (L * nt))

    def phi(self, theta_cart, xi, L: float | None = None):
        return 1.0 - self.zeta(theta_cart, xi, L)


def tau_cart(theta_cart, xi, m: float):
    xi = np.asarray(xi, dtype=float)
    th = np.asarray(theta_cart, dtype=float)
    a = np.sum((xi + th) ** 2, axis=-1)
    b = np.sum(xi ** 2, axis=-1)
    if m == 1:
        return a - b
    return a ** m - b ** m


def tau(lattice: Lattice, m: float, theta, xi):
    """h0(ξ+θ) - h0(ξ) with h0 = |ξ|^{2m}; θ in integer dual coordinates."""
    theta = tuple(int(t) for t in theta)
    if not any(theta):
        raise ValueError("tau needs a nonzero theta")
    return tau_cart(lattice.to_cart(theta), xi, m)


# ---------------------------------------------------------------------------
# evaluation context


class Evaluation:
    """Memo for one batch of base momenta; not shared between threads."""

    def __init__(self, lattice: Lattice, xi):
        self.lattice = lattice
        self.xi = np.atleast_2d(np.asarray(xi, dtype=float))
        self.n = self.xi.shape[0]
        self.zero = np.zeros(self.n, dtype=complex)
        self.zero.setflags(write=False)
        self._memo: dict = {}
        self._pts: dict = {}

    def points(self, shift: Theta) -> np.ndarray:
        p = self._pts.get(shift)
        if p is None:
            p = self.xi + self.lattice.to_cart(shift) if any(shift) else self.xi
            self._pts[shift] = p
        return p

    def get(self, sym: "PeriodicSymbol", theta: Theta, shift: Theta) -> np.ndarray:
        if theta not in sym.support_set:
            return self.zero
        key = (sym.uid, theta, shift)
        v = self._memo.get(key)
        if v is None:
            v = sym._eval(theta, self, shift)
            self._memo[key] = v
        return v

    def cached(self, key, make: Callable[[], np.ndarray]) -> np.ndarray:
        v = self._memo.get(key)
        if v is None:
            v = make()
            self._memo[key] = v
        return v


# ---------------------------------------------------------------------------
# symbol graph


class PeriodicSymbol:
    """Base node. Subclasses define ``_support`` and ``_eval``."""

    def __init__(self, lattice: Lattice, alpha: float = 0.0, beta: float = 1.0):
        self.lattice = lattice
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.uid = next(_uid)
        self._supp: tuple | None = None
        self._supp_set: frozenset | None = None

    # -- support
    def _support(self) -> Iterable[Theta]:
        raise NotImplementedError

    @property
    def support(self) -> tuple:
        if self._supp is None:
            s = sorted(set(self._support()),
                       key=lambda t: (float(np.linalg.norm(self.lattice.to_cart(t))), t))
            self._supp = tuple(s)
            self._supp_set = frozenset(s)
        return self._supp

    @property
    def support_set(self) -> frozenset:
        if self._supp_set is None:
            _ = self.support
        return self._supp_set  # type: ignore[return-value]

    def _eval(self, theta: Theta, ev: Evaluation, shift: Theta) -> np.ndarray:
        raise NotImplementedError

    # -- public evaluation
    @property
    def sqrt_dc(self) -> float:
        return float(np.sqrt(self.lattice.det))

    def coeff(self, theta, xi) -> np.ndarray:
        """b̂(θ, ξ) for a batch of momenta (..., d)."""
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, self.lattice.dim)
        ev = Evaluation(self.lattice, flat)
        z = (0,) * self.lattice.dim
        out = np.array(ev.get(self, tuple(int(t) for t in theta), z))
        return out.reshape(xi.shape[:-1])

    def coeffs(self, xi, thetas: Iterable | None = None) -> dict:
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, self.lattice.dim)
        ev = Evaluation(self.lattice, flat)
        z = (0,) * self.lattice.dim
        ths = self.support if thetas is None else [tuple(int(c) for c in t) for t in thetas]
        return {t: np.array(ev.get(self, t, z)).reshape(xi.shape[:-1]) for t in ths}

    def __call__(self, x, xi):
        return eval_symbol(self, x, xi)

    # -- algebra
    def __add__(self, other: "PeriodicSymbol") -> "PeriodicSymbol":
        return LinComb([(1.0, self), (1.0, other)])

    def __sub__(self, other: "PeriodicSymbol") -> "PeriodicSymbol":
        return LinComb([(1.0, self), (-1.0, other)])

    def __neg__(self) -> "PeriodicSymbol":
        return LinComb([(-1.0, self)])

    def __mul__(self, c) -> "PeriodicSymbol":
        return LinComb([(complex(c), self)])

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"{type(self).__name__}(support={len(self.support)})"


class Leaf(PeriodicSymbol):
    """Explicit coefficient evaluators b̂(θ, ·)."""

    def __init__(self, lattice: Lattice, coeffs: Mapping, alpha: float = 0.0, beta: float = 1.0):
        super().__init__(lattice, alpha, beta)
        d = lattice.dim
        self.fns: dict = {}
        for th, fn in coeffs.items():
            th = tuple(int(c) for c in th)
            if len(th) != d:
                raise ValueError(f"theta {th} has wrong dimension")
            self.fns[th] = fn if callable(fn) else compile_coeff(fn, d)

    def _support(self):
        return self.fns.keys()

    def _eval(self, theta, ev, shift):
        out = np.asarray(self.fns[theta](ev.points(shift)), dtype=complex)
        return np.broadcast_to(out, (ev.n,))


class FreeSymbol(PeriodicSymbol):
    """h0(ξ) = |ξ|^{2m}, stored as the θ = 0 coefficient √dc·h0."""

    def __init__(self, lattice: Lattice, m: float = 1.0):
        super().__init__(lattice, alpha=0.0, beta=1.0)
        self.m = float(m)

    def _support(self):
        return [(0,) * self.lattice.dim]

    def h0(self, xi):
        s = np.sum(np.asarray(xi, dtype=float) ** 2, axis=-1)
        return s if self.m == 1 else s ** self.m

    def _eval(self, theta, ev, shift):
        return (self.sqrt_dc * self.h0(ev.points(shift))).astype(complex)


class ZeroSymbol(PeriodicSymbol):
    def _support(self):
        return []

    def _eval(self, theta, ev, shift):
        return ev.zero


class LinComb(PeriodicSymbol):
    def __init__(self, terms: Sequence[tuple[complex, PeriodicSymbol]]):
        flat: list[tuple[complex, PeriodicSymbol]] = []
        for c, s in terms:
            if isinstance(s, LinComb):
                flat.extend((c * c2, s2) for c2, s2 in s.terms)
            elif not isinstance(s, ZeroSymbol):
                flat.append((c, s))
        lat = terms[0][1].lattice
        alpha = max((s.alpha for _, s in flat), default=0.0)
        beta = terms[0][1].beta
        super().__init__(lat, alpha, beta)
        self.terms = flat

    def _support(self):
        out = set()
        for _, s in self.terms:
            out |= s.support_set
        return out

    def _eval(self, theta, ev, shift):
        acc = np.zeros(ev.n, dtype=complex)
        for c, s in self.terms:
            if theta in s.support_set:
                acc += c * ev.get(s, theta, shift)
        return acc


def _pair_table(a: PeriodicSymbol, b: PeriodicSymbol) -> dict:
    table: dict = {}
    for th in a.support:
        for ph in b.support:
            table.setdefault(_add(th, ph), []).append((th, ph))
    return table


def _check_lattice(a: PeriodicSymbol, b: PeriodicSymbol):
    if a.lattice is not b.lattice and not (
            np.array_equal(a.lattice.basis, b.lattice.basis)):
        raise ValueError("symbols live on different lattices")


class Product(PeriodicSymbol):
    """(b∘g)^(χ, ξ) = dc^{-1/2} Σ_{θ+φ=χ} b̂(θ, ξ+φ) ĝ(φ, ξ)."""

    def __init__(self, a: PeriodicSymbol, b: PeriodicSymbol):
        _check_lattice(a, b)
        super().__init__(a.lattice, a.alpha + b.alpha, a.beta)
        self.a, self.b = a, b
        self.pairs = _pair_table(a, b)

    def _support(self):
        return self.pairs.keys()

    def _eval(self, chi, ev, shift):
        acc = np.zeros(ev.n, dtype=complex)
        for th, ph in self.pairs[chi]:
            acc += ev.get(self.a, th, _add(shift, ph)) * ev.get(self.b, ph, shift)
        return acc / self.sqrt_dc


class Commutator(PeriodicSymbol):
    """ad(b, g) = i(b∘g - g∘b), the bracket with the i prefactor."""

    def __init__(self, a: PeriodicSymbol, b: PeriodicSymbol):
        _check_lattice(a, b)
        super().__init__(a.lattice, a.alpha + b.alpha, a.beta)
        self.a, self.b = a, b
        self.pairs = _pair_table(a, b)

    def _support(self):
        return self.pairs.keys()

    def _eval(self, chi, ev, shift):
        acc = np.zeros(ev.n, dtype=complex)
        for th, ph in self.pairs[chi]:
            acc += (ev.get(self.a, th, _add(shift, ph)) * ev.get(self.b, ph, shift)
                    - ev.get(self.a, th, shift) * ev.get(self.b, ph, _add(shift, th)))
        return acc * (1j / self.sqrt_dc)


def product_symbol(b: PeriodicSymbol, g: PeriodicSymbol) -> PeriodicSymbol:
    return Product(b, g)


def commutator_symbol(b: PeriodicSymbol, g: PeriodicSymbol) -> PeriodicSymbol:
    return Commutator(b, g)


def nested_commutator(b: PeriodicSymbol, gs: Sequence[PeriodicSymbol]) -> PeriodicSymbol:
    """ad(b; g1, ..., gN) as a left fold."""
    out = b
    for g in gs:
        out = Commutator(out, g)
    return out


# ---------------------------------------------------------------------------
# six-part decomposition

PART_NAMES = ("up", "sharp", "nat", "flat", "down", "o")


class Part(PeriodicSymbol):
    """One of the six cutoff parts of a symbol, optionally restricted to θ ∈ V."""

    def __init__(self, child: PeriodicSymbol, kind: str, theta_r: FrequencySet,
                 bank: CutoffBank, subspace: LatticeSubspace | None = None):
        if kind not in PART_NAMES:
            raise ValueError(f"unknown part {kind!r}")
        super().__init__(child.lattice, child.alpha, child.beta)
        self.child, self.kind, self.theta_r, self.bank = child, kind, theta_r, bank
        self.subspace = subspace
        self._small = frozenset(theta_r.coords)

    def _support(self):
        zero = (0,) * self.lattice.dim
        out = []
        for th in self.child.support:
            if self.kind == "o":
                keep = th == zero
            elif self.kind == "up":
                keep = th != zero and th not in self._small
            else:
                keep = th in self._small
            if keep and self.subspace is not None and any(th):
                keep = self.subspace.contains(self.lattice.to_cart(th))
            if keep:
                out.append(th)
        return out

    def weight(self, theta: Theta, pts: np.ndarray) -> np.ndarray | None:
        kind, bank = self.kind, self.bank
        if kind in ("o", "up"):
            return None
        tc = self.lattice.to_cart(theta)
        if kind == "sharp":
            return bank.l_gt(tc, pts)
        if kind == "down":
            return bank.l_lt(tc, pts)
        e = bank.e(tc, pts)
        if kind == "nat":
            return bank.phi(tc, pts) * e
        return bank.zeta(tc, pts) * e

    def _eval(self, theta, ev, shift):
        val = ev.get(self.child, theta, shift)
        if self.kind in ("o", "up"):
            return val
        w = ev.cached(("w", self.kind, self.bank, theta, shift),
                      lambda: self.weight(theta, ev.points(shift)))
        return val * w


@dataclass(frozen=True)
class SixParts:
    up: PeriodicSymbol
    sharp: PeriodicSymbol
    nat: PeriodicSymbol
    flat: PeriodicSymbol
    down: PeriodicSymbol
    o: PeriodicSymbol

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in PART_NAMES}

    def total(self) -> PeriodicSymbol:
        return LinComb([(1.0, getattr(self, k)) for k in PART_NAMES])


def theta_ball(lattice: Lattice, params) -> FrequencySet:
    theta = getattr(params, "theta", None)
    if isinstance(theta, FrequencySet):
        return theta
    return enumerate_theta(lattice, params.r)


def decompose(sym: PeriodicSymbol, params, bank: CutoffBank) -> SixParts:
    th = theta_ball(sym.lattice, params)
    return SixParts(*(Part(sym, k, th, bank) for k in PART_NAMES))


def part(sym: PeriodicSymbol, kind: str, params, bank: CutoffBank,
         subspace: LatticeSubspace | None = None) -> PeriodicSymbol:
    return Part(sym, kind, theta_ball(sym.lattice, params), bank, subspace)


# ---------------------------------------------------------------------------
# evaluation, symmetry, norms


def eval_symbol(sym: PeriodicSymbol, x, xi) -> np.ndarray:
    """b(x, ξ) = dc^{-1/2} Σ_θ b̂(θ, ξ) e^{iθ·x}; x and ξ broadcast to (..., d)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast_shapes(x.shape, xi.shape)
    x = np.broadcast_to(x, shape).reshape(-1, sym.lattice.dim)
    xi = np.broadcast_to(xi, shape).reshape(-1, sym.lattice.dim)
    coeffs = sym.coeffs(xi)
    acc = np.zeros(x.shape[0], dtype=complex)
    for th, c in coeffs.items():
        acc += c * np.exp(1j * (x @ sym.lattice.to_cart(th)))
    return (acc / sym.sqrt_dc).reshape(shape[:-1])


def symmetry_defect(sym: PeriodicSymbol, xi) -> float:
    """max |b̂(θ, ξ) - conj b̂(-θ, ξ+θ)| over the support and the sample."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    worst = 0.0
    for th in sym.support:
        a = sym.coeff(th, xi)
        b = sym.coeff(_neg(th), xi + sym.lattice.to_cart(th))
        worst = max(worst, float(np.max(np.abs(a - np.conj(b)), initial=0.0)))
    return worst


def is_symmetric(sym: PeriodicSymbol, xi, tol: float = 1e-12) -> bool:
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    scale = 1.0
    for th in sym.support:
        scale = max(scale, float(np.max(np.abs(sym.coeff(th, xi)), initial=0.0)))
    return symmetry_defect(sym, xi) <= tol * scale


@dataclass(frozen=True)
class NormEstimate:
    l: int
    s: int
    value: float


def _bracket(v):
    return np.sqrt(1.0 + np.sum(np.asarray(v, dtype=float) ** 2, axis=-1))


def norm_grid(rho: float, d: int, n_radial: int = 24, n_angular: int = 16) -> np.ndarray:
    """Logarithmic in |ξ| over [1, 4ρ], uniform in angle."""
    radii = np.geomspace(1.0, 4.0 * rho, n_radial)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        ang = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        k = np.arange(n_angular) + 0.5
        z = 1 - 2 * k / n_angular
        phi = np.pi * (1 + 5 ** 0.5) * k
        rr = np.sqrt(1 - z ** 2)
        dirs = np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)
        if d > 3:
            dirs = np.concatenate([dirs, np.zeros((len(dirs), d - 3))], axis=1)
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)


def _derivative(sym: PeriodicSymbol, theta, xi: np.ndarray, multi: tuple) -> np.ndarray:
    if not any(multi):
        return sym.coeff(theta, xi)
    i = next(k for k, v in enumerate(multi) if v)
    lower = list(multi)
    lower[i] -= 1
    h = 1e-5 * np.maximum(1.0, np.linalg.norm(xi, axis=-1))
    step = np.zeros_like(xi)
    step[:, i] = h
    fp = _derivative(sym, theta, xi + step, tuple(lower))
    fm = _derivative(sym, theta, xi - step, tuple(lower))
    return (fp - fm) / (2 * h)


def estimate_norm(sym: PeriodicSymbol, l: int, s: int, grid) -> NormEstimate:
    """Sampled sup of <θ>^l w(ξ)^{-α+|s|} |D^s b̂(θ, ξ)| with w = <ξ>^β."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    d = sym.lattice.dim
    w = _bracket(grid) ** sym.beta
    best = 0.0
    multis = [m for m in itertools.product(range(s + 1), repeat=d) if sum(m) <= s]
    for th in sym.support:
        tb = float(_bracket(sym.lattice.to_cart(th))) ** l
        for mi in multis:
            der = np.abs(_derivative(sym, th, grid, mi))
            val = tb * np.max(w ** (-sym.alpha + sum(mi)) * der, initial=0.0)
            best = max(best, float(val))
    return NormEstimate(l, s, best)


# ---------------------------------------------------------------------------
# constructors


def constant_mode_symbol(lattice: Lattice, modes: Mapping, alpha: float = 0.0,
                         beta: float = 1.0) -> Leaf:
    """Leaf with constant b̂(θ, ·) values (already including the √dc factor)."""
    return Leaf(lattice, {th: complex(v) for th, v in modes.items()}, alpha, beta)


def from_fourier(lattice: Lattice, modes: Mapping, alpha: float = 0.0, beta: float = 1.0) -> Leaf:
    """Leaf from plain Fourier data b(x, ξ) = Σ c_θ(ξ) e^{iθx} (c given as expression/number)."""
    sq = float(np.sqrt(lattice.det))
    fns = {}
    for th, src in modes.items():
        base = src if callable(src) else compile_coeff(src, lattice.dim)
        fns[tuple(th)] = (lambda f: (lambda xi: sq * np.asarray(f(xi), dtype=complex)))(base)
    return Leaf(lattice, fns, alpha, beta)


class _Affine:
    """ξ ↦ lin·ξ + const, vectorized."""

    def __init__(self, lin, const):
        self.lin = np.asarray(lin, dtype=complex)
        self.const = complex(const)

    def __call__(self, xi):
        return np.asarray(xi, dtype=float) @ self.lin + self.const


def magnetic_schrodinger(lattice: Lattice, a_modes: Mapping, v_modes: Mapping,
                         alpha: float = 5 / 3, beta: float = 0.6, check_real: bool = True) -> Leaf:
    """Symbol of (-i∇ - a)² + V minus |ξ|²: -2a·ξ + i(∇·a) + a² + V.

    ``a_modes`` maps θ to the Fourier vector â_θ (a(x) = Σ â_θ e^{iθx}),
    ``v_modes`` maps θ to V̂_θ.
    """
    d = lattice.dim
    a = {tuple(int(c) for c in k): np.asarray(v, dtype=complex).reshape(d) for k, v in a_modes.items()}
    v = {tuple(int(c) for c in k): complex(val) for k, val in v_modes.items()}
    if check_real:
        for th, vec in a.items():
            partner = a.get(_neg(th))
            if partner is None or not np.allclose(partner, np.conj(vec), atol=1e-14):
                raise ValueError(f"magnetic potential is not real: mode {th} lacks a conjugate partner")
        for th, val in v.items():
            partner = v.get(_neg(th))
            if partner is None or abs(partner - np.conj(val)) > 1e-14:
                raise ValueError(f"electric potential is not real: mode {th} lacks a conjugate partner")
    const: dict = {}
    lin: dict = {}
    for th, vec in a.items():
        tc = lattice.to_cart(th)
        lin[th] = lin.get(th, 0) - 2 * vec
        const[th] = const.get(th, 0) - tc @ vec  # i·(iθ·â)
    for t1, v1 in a.items():
        for t2, v2 in a.items():
            th = _add(t1, t2)
            const[th] = const.get(th, 0) + v1 @ v2
    for th, val in v.items():
        const[th] = const.get(th, 0) + val
    sq = float(np.sqrt(lattice.det))
    fns = {}
    for th in set(const) | set(lin):
        l = np.asarray(lin.get(th, np.zeros(d)), dtype=complex) * sq
        c = complex(const.get(th, 0)) * sq
        if np.all(l == 0) and c == 0:
            continue
        fns[th] = _Affine(l, c)
    return Leaf(lattice, fns, alpha, beta)


def symbol_from_modes(lattice: Lattice, modes: Sequence[Mapping], alpha: float, beta: float) -> Leaf:
    """Config-style list of {theta, coeff} entries (coeff is the plain Fourier coefficient)."""
    data: dict = {}
    for entry in modes:
        th = tuple(int(c) for c in entry["theta"])
        if th in data:
            raise ValueError(f"duplicate mode {th}")
        data[th] = entry["coeff"]
    return from_fourier(lattice, data, alpha, beta)
