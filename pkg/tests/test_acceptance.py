"""Acceptance suite: one PASS/FAIL line per criterion, every tolerance pinned below.

Run with ``pytest tests/test_acceptance.py -s`` to see the report lines.
"""

import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from floquetlab.cli import main
from floquetlab.config import load_preset
from floquetlab.gauge import (conjugation_invariance, eigen_disagreement, remainder_exponent,
                              residual_table)
from floquetlab.gauge import build_series
from floquetlab.lattice import make_lattice
from floquetlab.measure import rng_stream, sample_shell, volume_study
from floquetlab.resonance import (brute_force_class, class_is_critical, classify, congruence_class,
                                  memberships, resolve_critical)
from floquetlab.spectrum import (BandFunction, ModelSymbol, band_overlap, build_fiber, cluster_matrix,
                                 counting, find_simple_direction, k_grid, lipschitz_ratios, radial_ratios,
                                 simplicity_gap)

# pinned tolerances
FREE_PAIRS = 100
RESIDUAL_REL = 1e-9
CONJ_REL = 1e-11
REMAINDER_FACTOR = 10.0
PARTITION_SAMPLES = 100_000
CLUSTER_REL = 1e-11
CLUSTER_CLASSES = 100
STABILITY_FACTOR = 3.0
BTILDE_TOL = 0.3
FREE_SIGMAS = 3.0
GAP_ENERGY = 0.95
BAND_ENERGY = 0.64

TWO_PI = 2 * math.pi


def report(n, ok: bool, text: str):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {text}")
    return ok


@pytest.fixture(scope="module")
def mag():
    return load_preset("magnetic2d")


# -- 1 ---------------------------------------------------------------------

def exact_count(lam: float, k) -> int:
    """#{n in Z²: |n + k|² <= λ}, row by row."""
    if lam < 0:
        return 0
    r = math.sqrt(lam)
    total = 0
    for n1 in range(math.floor(-k[0] - r) - 1, math.ceil(-k[0] + r) + 2):
        s = lam - (n1 + k[0]) ** 2
        if s < 0:
            continue
        h = math.sqrt(s)
        total += max(0, math.floor(-k[1] + h) - math.ceil(-k[1] - h) + 1)
    return total


def test_criterion_1_free_oracle():
    t0 = time.time()
    rho = 40.0
    lat = make_lattice(TWO_PI * np.eye(2))
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(FREE_PAIRS):
        k = rng.uniform(0, 1, 2)
        lam = rng.uniform(0, 4 * rho ** 2)
        fib = build_fiber(lat, None, k, 3 * rho, 1.0)
        bad += counting(fib, lam) != exact_count(lam, k)
    dt = time.time() - t0
    ok = report(1, bad == 0 and dt < 10, f"{FREE_PAIRS - bad}/{FREE_PAIRS} counts exact, {dt:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------

def test_criterion_2_gauge_residuals(mag):
    t0 = time.time()
    b = mag.build_symbol()
    series = build_series(b, mag.gauge(M=5), mag.geometry(), mag.bank())
    rows = residual_table(series, 1000, seed=mag.seed)
    worst = max(r["relative"] for r in rows)
    conj = conjugation_invariance(b, mag.gauge(M=5), mag.params(), mag.bank(), (0.1, 0.3), 24.0)
    dt = time.time() - t0
    ok = report(2, worst <= RESIDUAL_REL and conj <= CONJ_REL and dt < 120,
                f"max level residual {worst:.2e} (<= {RESIDUAL_REL:g}), conjugation {conj:.2e} "
                f"(<= {CONJ_REL:g}), {dt:.0f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------

def test_criterion_3_remainder_decay(mag):
    t0 = time.time()
    b = mag.build_symbol()
    rho = mag.rho
    configs = [mag.gauge(M=M) for M in range(1, 6)]
    rows = eigen_disagreement(b, configs, mag.params(), mag.bank(), (0.1, 0.3), 63.0,
                              rho ** 2 - 5, rho ** 2 + 5)
    diffs = [r["max_diff"] for r in rows]
    scale = remainder_exponent(configs[-1], 6).scale
    mono = all(a > c for a, c in zip(diffs, diffs[1:]))
    dt = time.time() - t0
    ok = report(3, mono and diffs[-1] < REMAINDER_FACTOR * scale and dt < 300,
                "disagreement M=1..5 " + ", ".join(f"{x:.2e}" for x in diffs)
                + f"; bound {REMAINDER_FACTOR:g}·ρ^(βε6) = {REMAINDER_FACTOR * scale:.3g}, {dt:.0f}s")
    assert ok


# -- 4 ---------------------------------------------------------------------

def test_criterion_4_partition(mag, worked_geom):
    t0 = time.time()
    geom = mag.geometry(rho=100.0)
    xs = sample_shell(rng_stream(mag.seed, 4), PARTITION_SAMPLES, 2, 50.0, 150.0)
    tc = geom.half_cart
    widths = geom.width * np.linalg.norm(tc, axis=1)
    in_any = np.any(np.abs(xs @ tc.T) < widths, axis=1)
    subs = geom.resonant_subspaces
    failures = skipped = 0
    # points in no layer: singleton classes, zone = unique top-dimensional V with |ξ_V| small
    single = xs[~in_any]
    hits = np.stack([np.linalg.norm(single @ V.frame.T, axis=1) < geom.rho ** geom.alpha_of(V.dim)
                     for V in subs], axis=1)
    dims = np.array([V.dim for V in subs])
    for row in hits:
        if row.any():
            top = dims[row].max()
            failures += int(np.count_nonzero(row & (dims == top)) != 1)
    # layer points: full closure, one zone, shifts inside its span
    for xi in xs[in_any]:
        cls = congruence_class(xi, geom)
        if class_is_critical(cls, geom):
            skipped += 1
            continue
        try:
            lab = classify(xi, geom, cls)
        except Exception:
            failures += 1
            continue
        members = memberships(cls.points, geom)
        top = [V for V in members if V.dim == lab.tier]
        if lab.tier and len(top) != 1:
            failures += 1
        sh = geom.lattice.to_cart(cls.shifts)
        if lab.tier == 0:
            failures += int(np.any(cls.shifts))
        else:
            res = sh - sh @ lab.subspace.frame.T @ lab.subspace.frame
            failures += int(np.abs(res).max() > 1e-9)
    cls = congruence_class([3.0, 100.0], worked_geom)
    oracle = brute_force_class([3.0, 100.0], worked_geom, radius=20.0)
    worked = len(cls) == 13 and oracle == {tuple(s) for s in cls.shifts.tolist()}
    dt = time.time() - t0
    ok = report(4, failures == 0 and worked and dt < 60,
                f"{PARTITION_SAMPLES - skipped} samples, {failures} failures ({skipped} critical skipped); "
                f"worked class {'reproduced' if worked else 'differs'}, {dt:.0f}s")
    assert ok


# -- 5 ---------------------------------------------------------------------

def test_criterion_5_cluster_equivalence(mag):
    t0 = time.time()
    geom = mag.geometry()
    model = ModelSymbol(geom, mag.build_symbol(), mag.m, mag.bank())
    rng = np.random.default_rng(5)
    worst, n = 0.0, 0
    while n < CLUSTER_CLASSES:
        t = np.array([rng.uniform(-1, 1) * geom.width, rng.uniform(0.6, 1.4) * geom.rho])
        xi = resolve_critical(t if rng.random() < 0.5 else t[::-1].copy(), geom)
        cls = congruence_class(xi, geom)
        if len(cls) < 2:
            continue
        n += 1
        ref = np.sort(cluster_matrix(xi, model).eigenvalues())
        for p in cls.points:
            ev = np.sort(cluster_matrix(p, model).eigenvalues())
            worst = max(worst, float(np.max(np.abs(ev - ref)) / np.max(np.abs(ref))))
    dt = time.time() - t0
    ok = report(5, worst <= CLUSTER_REL and dt < 60,
                f"{n} resonant classes, max relative eigenvalue gap {worst:.2e}, {dt:.0f}s")
    assert ok


# -- 6 ---------------------------------------------------------------------

def test_criterion_6_lipschitz_and_radial(mag):
    t0 = time.time()
    lat = mag.lattice()
    b = mag.build_symbol(lat)
    lip, lo, hi = [], [], []
    for rho in (20.0, 40.0, 80.0):
        lip.append(float(lipschitz_ratios(lat, b, rho, mag.m, n_pairs=4, seed=6, half_window=2.0).max()))
        band = BandFunction(ModelSymbol(mag.geometry(rho=rho, lattice=lat), b, mag.m, mag.bank(rho)))
        r = radial_ratios(band, n_classes=10, seed=6)
        lo.append(float(r.min()))
        hi.append(float(r.max()))

    def spread(v):
        return max(v) / min(v)

    dt = time.time() - t0
    ok = report(6, min(lo) > 0 and max(spread(lip), spread(lo), spread(hi)) <= STABILITY_FACTOR and dt < 600,
                f"Lipschitz C {', '.join(f'{x:.2f}' for x in lip)}; radial c {', '.join(f'{x:.2f}' for x in lo)}"
                f", C {', '.join(f'{x:.2f}' for x in hi)} at ρ=20,40,80, {dt:.0f}s")
    assert ok


# -- 7 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def volumes(mag):
    t0 = time.time()
    rep = volume_study(mag.with_overrides(samples=1_000_000))
    rep["seconds"] = time.time() - t0
    return rep


def test_criterion_7a_btilde_exponent(volumes):
    fit = volumes["fits"]["Btilde"]
    if fit["fit"] is None:
        text = f"B̃ fit unavailable: {fit['error']}"
    else:
        text = f"B̃ exponent {fit['fit']['exponent']:.3f} vs {fit['reference_exponent']} ± {BTILDE_TOL}"
    fracs = ", ".join(f"{r['S_fraction']:.2f}" for r in volumes["per_rho"])
    ok = report("7a", bool(fit["passed"]), f"{text} (S(ρ) covers {fracs} of the sphere)")
    assert ok


def test_criterion_7b_D_bound(volumes):
    fit = volumes["fits"]["D"]
    ok = report("7b", fit["bound_passed"] and volumes["seconds"] < 600,
                f"C = {fit['C_fitted']:.3g}; ratios {', '.join(f'{x:.3g}' for x in fit['ratios'])}; "
                f"exponent {fit['fit']['exponent']:.3f}, upper95 {fit['upper95']:.3f}; "
                f"{volumes['seconds']:.0f}s")
    assert ok


def test_criterion_7c_free_annulus(volumes):
    fa = volumes["free_annulus"]
    ok = report("7c", fa["z"] <= FREE_SIGMAS,
                f"free 𝒜 {fa['estimate']['value']:.5f} vs exact {fa['exact']:.5f}, z = {fa['z']:.2f}")
    assert ok


# -- 8 ---------------------------------------------------------------------

def test_criterion_8a_cli_overlap(tmp_path):
    t0 = time.time()
    res = CliRunner().invoke(main, ["overlap", "--config", "magnetic2d",
                                    "--lambda", "1600", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    payload = json.loads(res.output.strip().splitlines()[-1])
    dt = time.time() - t0
    ok = report("8a", payload["zeta"] > 0, f"overlap ζ(1600) = {payload['zeta']:.4g}, {dt:.0f}s")
    assert ok


def test_criterion_8b_simple_direction(mag):
    geom = mag.geometry()
    band = BandFunction(ModelSymbol(geom, mag.build_symbol(), mag.m, mag.bank()))
    res = find_simple_direction(mag.rho, mag.delta(mag.rho), band, budget=32)
    if res.omega is not None:
        from floquetlab.spectrum import interval_I
        t1, t2 = interval_I(res.omega, mag.rho, mag.delta(mag.rho), band)
        clean = all(simplicity_gap(band, t * res.omega, 1.0) > 0 for t in np.linspace(t1, t2, 9))
        text = f"direction {np.round(res.omega, 4).tolist()}, interval clean: {clean}"
    else:
        clean = False
        text = f"no direction: {res.reason} (tried {res.tried})"
    ok = report("8b", clean, text)
    assert ok


def one_dim_bands(q: float, n_bands: int, nk: int = 401, N: int = 30) -> np.ndarray:
    """Band edges of -d²/dt² + 2q cos t on 2π-periodic functions (Hill matrix)."""
    n = np.arange(-N, N + 1)
    off = q * (np.eye(len(n), k=1) + np.eye(len(n), k=-1))
    ev = np.array([np.linalg.eigvalsh(np.diag((n + k) ** 2.0) + off)[:n_bands]
                   for k in np.linspace(0, 1, nk)])
    return np.stack([ev.min(0), ev.max(0)], axis=1)


def test_criterion_8c_separable_gap():
    cfg = load_preset("separable2d")
    lat = cfg.lattice()
    b = cfg.build_symbol(lat)
    edges = one_dim_bands(1.5, 4)
    sums = [(a[0] + c[0], a[1] + c[1]) for a in edges for c in edges]

    def in_spectrum(lam):
        return any(lo <= lam <= hi for lo, hi in sums)

    ks = k_grid(lat, cfg.k_grid)
    gap = band_overlap(lat, b, GAP_ENERGY, ks, cfg.cutoff, cfg.m, cfg.half_window)
    inside = band_overlap(lat, b, BAND_ENERGY, ks, cfg.cutoff, cfg.m, cfg.half_window)
    ok = report("8c", gap.zeta == 0 and not in_spectrum(GAP_ENERGY) and inside.zeta > 0
                and in_spectrum(BAND_ENERGY),
                f"ζ({GAP_ENERGY}) = {gap.zeta:g} (Hill oracle: gap), ζ({BAND_ENERGY}) = {inside.zeta:.3g} "
                f"(Hill oracle: band)")
    assert ok
