"""Resonant layers, congruence classes and the zone partition of momentum space."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, InternalError, ParamsInconsistent, SizeCapError
from .lattice import (FrequencySet, Lattice, LatticeSubspace, SubspaceFamily, enumerate_subspaces,
                      canonical_sign, enumerate_theta, make_subspace, zero_subspace)

CLASS_CAP = 100_000
CRITICAL_TOL = 1e-9
NUDGE = 1e-9

DEFAULT_ALPHAS = {2: (0.6, 0.8), 3: (0.6, 0.75, 0.9)}
DEFAULT_KAPPA = {2: 0.02, 3: 0.008}


@dataclass(frozen=True)
class ResonanceParams:
    rho: float
    kappa: float
    alphas: tuple  # (α1, ..., αd)
    r_override: float | None = None

    @property
    def r(self) -> float:
        return self.r_override if self.r_override is not None else self.rho ** self.kappa

    @property
    def beta(self) -> float:
        return self.alphas[0]

    def layer_width(self) -> float:
        return self.rho ** self.alphas[0]

    def violations(self, lattice: Lattice | None = None) -> list[str]:
        msgs = []
        a = (0.0,) + tuple(self.alphas)
        d = len(self.alphas)
        if self.rho < 1:
            msgs.append(f"rho >= 1 required (got {self.rho})")
        for n in range(d):
            if not a[n] < a[n + 1]:
                msgs.append(f"alpha_{n} < alpha_{n + 1} required")
        if not a[-1] < 1:
            msgs.append(f"alpha_{d} < 1 required (got {a[-1]})")
        gap = 2 * self.kappa * d * d
        for n in range(0, d):
            if not a[n + 1] > a[n] + gap:
                msgs.append(
                    f"alpha_{n + 1} > alpha_{n} + 2*kappa*d^2 violated: "
                    f"{a[n + 1]:g} <= {a[n]:g} + {gap:g}")
        if lattice is not None:
            if lattice.dim != d:
                msgs.append(f"{d} alphas given for a {lattice.dim}-dimensional lattice")
            else:
                th = enumerate_theta(lattice, self.r)
                rank = np.linalg.matrix_rank(th.vectors) if len(th) else 0
                if rank < d:
                    msgs.append(f"r = rho^kappa = {self.r:.6g} is below r0: Theta_r spans only "
                                f"{rank} of {d} dimensions")
        return msgs

    def check(self, lattice: Lattice | None = None) -> "ResonanceParams":
        msgs = self.violations(lattice)
        if msgs:
            raise ConfigError("; ".join(msgs))
        return self


def default_params(d: int, rho: float) -> ResonanceParams:
    return ResonanceParams(float(rho), DEFAULT_KAPPA[d], DEFAULT_ALPHAS[d])


class Geometry:
    """Lattice plus resonance parameters, with the derived Θ_r and subspace family."""

    def __init__(self, lattice: Lattice, params: ResonanceParams, validate: bool = True):
        if validate:
            params.check(lattice)
        self.lattice = lattice
        self.params = params
        self.rho = params.rho
        self.d = lattice.dim
        self.width = params.layer_width()

    @property
    def r(self) -> float:
        return self.params.r

    @cached_property
    def theta(self) -> FrequencySet:
        return enumerate_theta(self.lattice, self.params.r)

    @cached_property
    def half_theta(self) -> list:
        """One representative of each ±θ pair."""
        out = []
        for t in self.theta.coords:
            c = canonical_sign(t)
            if c not in out:
                out.append(c)
        return out

    @cached_property
    def half_cart(self) -> np.ndarray:
        return self.lattice.to_cart(np.array(self.half_theta, dtype=float).reshape(-1, self.d))

    @cached_property
    def family(self) -> SubspaceFamily:
        return enumerate_subspaces(self.lattice, self.theta)

    @cached_property
    def resonant_subspaces(self) -> list:
        return [V for V in self.family.all if V.dim >= 1]

    def alpha_of(self, n: int) -> float:
        return 0.0 if n == 0 else self.params.alphas[n - 1]


# ---------------------------------------------------------------------------
# layers and classes


def in_layer(theta_cart, xi, params: ResonanceParams) -> bool | np.ndarray:
    th = np.asarray(theta_cart, dtype=float)
    nt = float(np.linalg.norm(th))
    if nt == 0:
        return np.ones(np.shape(xi)[:-1], dtype=bool) if np.ndim(xi) > 1 else True
    val = np.abs(np.asarray(xi, dtype=float) @ th) < params.layer_width() * nt
    return val if np.ndim(val) else bool(val)


@dataclass(frozen=True)
class CongruenceClass:
    representative: np.ndarray
    shifts: np.ndarray  # integer dual coordinates, sorted
    points: np.ndarray
    span: LatticeSubspace
    used: tuple = ()

    def __len__(self) -> int:
        return len(self.shifts)

    def key(self, lattice: Lattice) -> tuple:
        return tuple(map(tuple, self.shifts.tolist()))

    def point_set(self, decimals: int = 9) -> set:
        return {tuple(np.round(p, decimals)) for p in self.points}


def _line_range(proj: float, tt: float, width_t: float) -> tuple[int, int]:
    """Integers l with |proj + l·tt| < width_t, i.e. the θ-line inside the layer."""
    lo = math.floor((-width_t - proj) / tt) + 1
    hi = math.ceil((width_t - proj) / tt) - 1
    # strict inequality guard
    while abs(proj + lo * tt) >= width_t and lo <= hi:
        lo += 1
    while abs(proj + hi * tt) >= width_t and hi >= lo:
        hi -= 1
    return lo, hi


def congruence_class(xi, geom: Geometry, cap: int = CLASS_CAP) -> CongruenceClass:
    xi = np.asarray(xi, dtype=float)
    lat = geom.lattice
    d = geom.d
    zero = (0,) * d
    thetas = geom.half_theta
    tcart = geom.half_cart
    tt = np.einsum("ij,ij->i", tcart, tcart)
    widths = geom.width * np.sqrt(tt)
    seen = {zero}
    frontier = [zero]
    used = set()
    walked = set()  # (point, i): the θ_i-line through point is already enumerated
    while frontier:
        nxt = []
        for n in frontier:
            eta = xi + lat.to_cart(n)
            proj = tcart @ eta
            for i in np.flatnonzero(np.abs(proj) < widths):
                if (n, i) in walked:
                    continue
                lo, hi = _line_range(proj[i], tt[i], widths[i])
                if hi > lo:
                    used.add(thetas[i])
                th = thetas[i]
                for l in range(lo, hi + 1):
                    m = tuple(a + l * b for a, b in zip(n, th))
                    walked.add((m, i))
                    if l == 0:
                        continue
                    if m not in seen:
                        seen.add(m)
                        nxt.append(m)
                        if len(seen) > cap:
                            raise SizeCapError(
                                f"congruence closure exceeded {cap} points; rho is too small "
                                "for the chosen alphas")
        frontier = nxt
    shifts = np.array(sorted(seen), dtype=int).reshape(-1, d)
    pts = xi + lat.to_cart(shifts)
    span = make_subspace(lat, sorted(used)) if used else zero_subspace(d)
    return CongruenceClass(xi.copy(), shifts, pts, span, tuple(sorted(used)))


def brute_force_class(xi, geom: Geometry, radius: float) -> set:
    """Reference closure: graph search over every lattice point in a ball around ξ.

    Edges join η, η + lθ when both lie in Λ(θ). Independent of the line-range
    shortcut used by ``congruence_class``.
    """
    from .lattice import lattice_points_in_ball

    xi = np.asarray(xi, dtype=float)
    lat = geom.lattice
    pts = [tuple(p) for p in lattice_points_in_ball(lat.dual_basis, radius).tolist()]
    index = set(pts)
    width = geom.width
    thetas = list(geom.theta.coords)

    def inside(n, th) -> bool:
        tc = lat.to_cart(th)
        return abs(float((xi + lat.to_cart(n)) @ tc)) < width * float(np.linalg.norm(tc))

    zero = (0,) * lat.dim
    comp = {zero}
    stack = [zero]
    while stack:
        n = stack.pop()
        for th in thetas:
            if not inside(n, th):
                continue
            for l in range(1, int(2 * radius) + 2):
                m = tuple(a + l * b for a, b in zip(n, th))
                if m not in index:
                    break
                if inside(m, th) and m not in comp:
                    comp.add(m)
                    stack.append(m)
    return comp


def is_critical(xi, geom: Geometry, tol: float = CRITICAL_TOL) -> bool:
    xi = np.asarray(xi, dtype=float)
    w = geom.width
    for tc in geom.half_cart:
        nt = float(np.linalg.norm(tc))
        t = float(xi @ tc) / nt
        for target in (w, -w):
            r = math.fmod(t - target, nt)
            r = min(abs(r), nt - abs(r))
            if r <= tol * max(1.0, abs(t)):
                return True
    return False


def class_is_critical(cls: CongruenceClass, geom: Geometry, tol: float = CRITICAL_TOL) -> bool:
    return any(is_critical(p, geom, tol) for p in cls.points)



def _nudge_dir(d: int) -> np.ndarray:
    v = np.array([math.sqrt(2) - 1, math.sqrt(3) - 1, math.sqrt(5) - 2, math.sqrt(7) - 2])[:d]
    return v / np.linalg.norm(v)


def resolve_critical(xi, geom: Geometry, attempts: int = 8) -> np.ndarray:
    """Nudge ξ off the critical set by multiples of 1e-9 along a fixed direction."""
    xi = np.asarray(xi, dtype=float)
    u = _nudge_dir(geom.d)
    out = xi
    for k in range(attempts):
        cls = congruence_class(out, geom)
        if not class_is_critical(cls, geom):
            return out
        out = xi + (k + 1) * NUDGE * max(1.0, float(np.linalg.norm(xi))) * u
    raise ParamsInconsistent("could not move the point off the critical set")


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ZoneLabel:
    subspace: LatticeSubspace
    tier: int
    cls: CongruenceClass | None = field(default=None, compare=False)


def memberships(points: np.ndarray, geom: Geometry) -> list:
    """Subspaces V (dim >= 1) whose Ξ2(V) contains the class made of ``points``."""
    out = []
    for V in geom.resonant_subspaces:
        thr = geom.rho ** geom.alpha_of(V.dim)
        proj = points @ V.frame.T
        if np.any(np.linalg.norm(proj, axis=1) < thr):
            out.append(V)
    return out


def classify(xi, geom: Geometry, cls: CongruenceClass | None = None) -> ZoneLabel:
    if cls is None:
        cls = congruence_class(xi, geom)
    members = memberships(cls.points, geom)
    if not members:
        label = ZoneLabel(zero_subspace(geom.d), 0, cls)
    else:
        top = max(V.dim for V in members)
        best = [V for V in members if V.dim == top]
        if len(best) > 1:
            raise ParamsInconsistent(
                f"point {np.asarray(xi).tolist()} lies in two resonant sets of dimension {top}: "
                + ", ".join(V.label() for V in best) + " (rho too small)")
        label = ZoneLabel(best[0], top, cls)
    V = label.subspace
    shifts = geom.lattice.to_cart(cls.shifts)
    if V.dim == 0:
        ok = not np.any(cls.shifts)
    else:
        res = shifts - shifts @ V.frame.T @ V.frame
        ok = bool(np.all(np.linalg.norm(res, axis=1) <= 1e-9 * np.maximum(1, np.linalg.norm(shifts, axis=1))))
    if not ok:
        raise InternalError(f"shift set of {np.asarray(xi).tolist()} is not contained in {V.label()}")
    return label


def classify_many(xis: np.ndarray, geom: Geometry) -> tuple[np.ndarray, list]:
    """Vectorized classification. Returns (label index per point, subspace list).

    Index 0 is the zero subspace, index i >= 1 refers to ``geom.family.all``.
    Points that lie in no layer form singleton classes and are handled in bulk;
    the rest go through the full closure.
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    subs = geom.family.all
    pos = {id(V): i for i, V in enumerate(subs)}
    out = np.zeros(len(xis), dtype=int)
    tc = geom.half_cart
    widths = geom.width * np.linalg.norm(tc, axis=1)
    in_any = np.any(np.abs(xis @ tc.T) < widths, axis=1)
    single = np.flatnonzero(~in_any)
    if len(single):
        best_dim = np.zeros(len(single), dtype=int)
        best_idx = np.zeros(len(single), dtype=int)
        clash = np.zeros(len(single), dtype=bool)
        for V in geom.resonant_subspaces:
            thr = geom.rho ** geom.alpha_of(V.dim)
            hit = np.linalg.norm(xis[single] @ V.frame.T, axis=1) < thr
            higher = hit & (V.dim > best_dim)
            same = hit & (V.dim == best_dim) & (best_dim > 0)
            clash[same] = True
            clash[higher] = False
            best_dim[higher] = V.dim
            best_idx[higher] = pos[id(V)]
        if np.any(clash):
            i = single[np.flatnonzero(clash)[0]]
            raise ParamsInconsistent(f"point {xis[i].tolist()} lies in two resonant sets (rho too small)")
        # a singleton class has zero shift set, contained in every V
        out[single] = best_idx
    for i in np.flatnonzero(in_any):
        lab = classify(xis[i], geom)
        out[i] = next(j for j, V in enumerate(subs) if V == lab.subspace)
    return out, subs


def sphere_class(omega, geom: Geometry, const: float = 16.0) -> str:
    omega = np.asarray(omega, dtype=float)
    return "S" if in_sphere_S(omega[None, :], geom, const)[0] else "T"


def in_sphere_S(omegas: np.ndarray, geom: Geometry, const: float = 16.0) -> np.ndarray:
    d = geom.d
    a = geom.alpha_of(d - 1)
    thr = const * geom.rho ** (a - 1)
    tc = geom.half_cart
    n = tc / np.linalg.norm(tc, axis=1, keepdims=True)
    return np.any(np.abs(np.atleast_2d(omegas) @ n.T) < thr, axis=1)


def sphere_threshold(geom: Geometry, const: float = 16.0) -> float:
    return const * geom.rho ** (geom.alpha_of(geom.d - 1) - 1)


def resonance_map(xis: np.ndarray, geom: Geometry) -> list[dict]:
    rows = []
    for xi in np.atleast_2d(xis):
        p = resolve_critical(xi, geom)
        lab = classify(p, geom)
        rows.append({
            "xi": p.tolist(),
            "norm": float(np.linalg.norm(p)),
            "dim": lab.tier,
            "generators": [list(g) for g in lab.subspace.generators],
            "card": len(lab.cls),
        })
    return rows
