import math

import numpy as np
import pytest

from floquetlab.errors import SizeCapError
from floquetlab.lattice import lattice_points_in_ball
from floquetlab.resonance import congruence_class, resolve_critical
from floquetlab.spectrum import (BandFunction, ModelSymbol, band_overlap, build_fiber, cluster_matrix,
                                 counting, eig_window, eigenvalues, find_simple_direction, inertia_count,
                                 interval_I, k_grid, overlap_from_windows, simplicity_gap, zeta_bisect)
from floquetlab.symbols import constant_mode_symbol


def test_free_fiber_diagonal(z2):
    fib = build_fiber(z2, None, [0.0, 0.0], math.sqrt(2), 1.0)
    assert fib.diagonal_only
    assert sorted(fib.matrix.diagonal().real.tolist()) == [0, 1, 1, 1, 1, 2, 2, 2, 2]


def test_two_cos_entries(z2):
    sq = math.sqrt(z2.det)
    b = constant_mode_symbol(z2, {(1, 0): sq, (-1, 0): sq})
    fib = build_fiber(z2, b, [0.0, 0.0], 3.0)
    idx = fib.index
    H = fib.matrix.toarray()
    for i, c in enumerate(idx.coords):
        for s in ((1, 0), (-1, 0)):
            j = idx.lookup(np.array([c + np.array(s)]))[0]
            if j >= 0:
                assert H[j, i] == pytest.approx(1.0)
    assert np.count_nonzero(H - np.diag(np.diag(H))) == sum(
        int(idx.lookup(np.array([c + np.array(s)]))[0] >= 0) for c in idx.coords for s in ((1, 0), (-1, 0)))


def test_magnetic_fiber_hermitian(z2, magnetic_symbol):
    fib = build_fiber(z2, magnetic_symbol, [0.13, 0.71], 20.0)
    assert fib.hermitian_defect() <= 1e-12


def test_counting_examples(z2):
    fib = build_fiber(z2, None, [0.0, 0.0], 5.0)
    assert counting(fib, 2.0) == 9
    assert counting(fib, -0.5) == 0
    assert counting(fib, 1.5) == 5


def test_inertia_matches_dense(z2, magnetic_symbol):
    fib = build_fiber(z2, magnetic_symbol, [0.3, 0.1], 22.0)
    ev = eigenvalues(fib)
    for mu in (3.3, 101.7, 250.2, 400.9):
        assert inertia_count(fib.matrix, mu) == int(np.count_nonzero(ev <= mu))
    w = eig_window(fib, 95.0, 105.0)
    ref = ev[(ev >= 95) & (ev <= 105)]
    assert np.allclose(w.values, ref, atol=1e-9) and w.first == int(np.count_nonzero(ev < 95))


def test_size_cap(z2):
    with pytest.raises(SizeCapError):
        build_fiber(z2, None, [0, 0], 1000.0)


def test_singleton_cluster(magnetic_cfg):
    geom = magnetic_cfg.geometry()
    model = ModelSymbol(geom, magnetic_cfg.build_symbol(), 1.0, magnetic_cfg.bank())
    xi = np.array([23.3, 31.9])
    assert len(congruence_class(xi, geom)) == 1
    cm = cluster_matrix(xi, model)
    assert cm.entries.shape == (1, 1)
    assert cm.entries[0, 0].real == pytest.approx(model.diagonal(xi[None])[0])


def test_worked_cluster_free(worked_geom):
    model = ModelSymbol(worked_geom, None)
    cm = cluster_matrix([3.0, 100.0], model)
    expect = sorted(j ** 2 + 100.0 ** 2 for j in range(-6, 7))
    assert np.allclose(cm.eigenvalues(), expect)


def test_g_free_values(worked_geom):
    band = BandFunction(ModelSymbol(worked_geom, None))
    assert band.value([37.3, 95.1]) == pytest.approx(10435.30)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-150, 150, size=(200, 2))
    pts[:50, 0] = rng.uniform(-6, 6, 50)
    assert np.allclose(band.values(pts), np.sum(pts ** 2, axis=1), rtol=1e-13)


def test_g_bijective_on_worked_class(worked_geom, z2):
    sq = math.sqrt(z2.det)
    small = constant_mode_symbol(z2, {(1, 0): 0.3 * sq, (-1, 0): 0.3 * sq, (0, 0): 0.1 * sq})
    model = ModelSymbol(worked_geom, small, 1.0)
    band = BandFunction(model)
    xi = resolve_critical(np.array([3.0, 100.0]), worked_geom)
    pts, vals = band.class_values(xi)
    assert len(pts) == 13
    ev = cluster_matrix(xi, model).eigenvalues()
    assert np.allclose(np.sort(vals), np.sort(ev))
    # each class point looked up individually gets its own eigenvalue
    got = sorted(band.value(p, nudge=False) for p in pts)
    assert np.allclose(got, np.sort(ev))


def test_free_overlap_positive(z2):
    ks = k_grid(z2, 32)
    rep = band_overlap(z2, None, 10.0, ks, 8.0, 1.0, half_window=3.0)
    assert rep.zeta > 0


def test_overlap_nested_grids_nondecreasing(z2, magnetic_symbol):
    # cell-centred grids with n and 3n points per axis are nested
    lam = 100.0
    r1 = band_overlap(z2, magnetic_symbol, lam, k_grid(z2, 2), 22.0, half_window=4.0)
    r3 = band_overlap(z2, magnetic_symbol, lam, k_grid(z2, 6), 22.0, half_window=4.0)
    assert r3.zeta >= r1.zeta


def test_overlap_two_routes(z2, magnetic_symbol):
    lam = 100.0
    ks = k_grid(z2, 3)
    fibs = [build_fiber(z2, magnetic_symbol, k, 22.0) for k in ks]
    rep = overlap_from_windows(lam, ks, [eig_window(f, lam - 4, lam + 4) for f in fibs])
    z = zeta_bisect(lambda mu, i: counting(fibs[i], mu), lam, len(ks), 4.0, rel=1e-10)
    assert rep.zeta == pytest.approx(z, rel=1e-8, abs=1e-8)


def test_interval_free(z2, magnetic_cfg):
    geom = magnetic_cfg.geometry()
    band = BandFunction(ModelSymbol(geom, None))
    rho, delta = 40.0, 5.0
    t1, t2 = interval_I([math.cos(0.3), math.sin(0.3)], rho, delta, band)
    assert t1 == pytest.approx(math.sqrt(rho ** 2 - delta), rel=1e-9)
    assert t2 == pytest.approx(math.sqrt(rho ** 2 + delta), rel=1e-9)
    ref = delta * rho ** -1 / 2
    assert ref / 4 <= (t2 - t1) / 2 <= 4 * ref


def test_interval_magnetic_increasing(magnetic_cfg, magnetic_symbol):
    geom = magnetic_cfg.geometry()
    band = BandFunction(ModelSymbol(geom, magnetic_symbol, 1.0, magnetic_cfg.bank()))
    om = np.array([math.cos(0.7), math.sin(0.7)])
    t1, t2 = interval_I(om, 40.0, magnetic_cfg.delta(40.0), band)
    ts = np.linspace(t1, t2, 25)
    g = [band.value(t * om) for t in ts]
    assert np.all(np.diff(g) > 0)


def test_simple_directions_free(magnetic_cfg):
    geom = magnetic_cfg.geometry()
    band = BandFunction(ModelSymbol(geom, None))
    rho = 40.0
    om = np.array([1.0, math.sqrt(2)]) / math.sqrt(3)
    # explicit coincidence check: |tΩ + n| = |tΩ| for some lattice n ≠ 0 with t in I
    t1, t2 = interval_I(om, rho, 1.0, band)
    for t in np.linspace(t1, t2, 5):
        xi = t * om
        assert simplicity_gap(band, xi, 1.0) > 1e-6
    # on the mirror line k2 = 1/2 the reflection m2 -> -1 - m2 pairs ξ with ξ - (0, 1)
    xi = np.array([40.0, 0.5])
    assert simplicity_gap(band, xi, 1.0) < 1e-9


def test_find_simple_direction_certificate(magnetic_cfg, magnetic_symbol):
    geom = magnetic_cfg.geometry()
    band = BandFunction(ModelSymbol(geom, magnetic_symbol, 1.0, magnetic_cfg.bank()))
    # at ρ = 40 the cap 16ρ^{α1-1} exceeds 1, so every direction is in S(ρ)
    res = find_simple_direction(40.0, magnetic_cfg.delta(40.0), band, budget=16)
    assert res.omega is None and "empty" in res.reason and res.tried == 0
