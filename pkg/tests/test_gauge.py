import math

import numpy as np
import pytest

from floquetlab.errors import ConfigError
from floquetlab.gauge import (GaugeConfig, build_matrix_series, build_series, conjugate_fiber,
                              conjugation_invariance, exactness_radius, level_residual,
                              matrix_level_residual, remainder_exponent, shell_samples,
                              solve_commutator_equation)
from floquetlab.resonance import Geometry, ResonanceParams
from floquetlab.spectrum import symbol_matrix
from floquetlab.symbols import (Commutator, CutoffBank, FreeSymbol, LinComb, constant_mode_symbol,
                                nested_commutator, part, theta_ball)


def _samples(series, n, seed=0):
    rng = np.random.default_rng(seed)
    xi = shell_samples(rng, n, 2, series.config.rho)
    thetas = theta_ball(series.b.lattice, series.params).coords
    th = [thetas[i] for i in rng.integers(0, len(thetas), n)]
    return th, xi


def test_psi_direct_value(z2):
    params = ResonanceParams(5.0, 0.02, (0.6, 0.8), r_override=1.5)
    bank = CutoffBank(5.0, 0.6)
    a = constant_mode_symbol(z2, {(1, 0): 5.0, (-1, 0): 5.0})
    psi = solve_commutator_equation(a, params, bank, 1.0)
    xi = np.array([[3.0, 4.0]])
    assert part(a, "nat", params, bank).coeff((1, 0), xi)[0] == pytest.approx(5.0)
    assert psi.coeff((1, 0), xi)[0] == pytest.approx(5j / 7)


def test_psi_zero_without_nonresonant_part(z2, magnetic_cfg):
    a = constant_mode_symbol(z2, {(0, 0): 3.0})
    psi = solve_commutator_equation(a, magnetic_cfg.params(), magnetic_cfg.bank(), 1.0)
    assert psi.support == ()


@pytest.fixture(scope="module")
def series5(magnetic_cfg, magnetic_symbol):
    return build_series(magnetic_symbol, magnetic_cfg.gauge(M=5), magnetic_cfg.geometry(),
                        magnetic_cfg.bank())


def test_first_level_residual(series5):
    th, xi = _samples(series5, 1000, seed=11)
    worst, scale = level_residual(series5, 1, th, xi)
    assert scale > 0 and worst <= 1e-10 * scale


def test_depth_one_series(magnetic_cfg, magnetic_symbol):
    s = build_series(magnetic_symbol, magnetic_cfg.gauge(M=1), magnetic_cfg.geometry(), magnetic_cfg.bank())
    assert s.t_parts == {} and len(s.psi) == 1
    th, xi = _samples(s, 50)
    for t in set(th):
        assert np.allclose(s.x.coeff(t, xi), magnetic_symbol.coeff(t, xi))


def test_b2_is_single_commutator(series5, magnetic_symbol):
    ref = Commutator(magnetic_symbol, series5.psi[0])
    th, xi = _samples(series5, 100, seed=2)
    for t in set(th):
        assert np.allclose(series5.b_parts[2].coeff(t, xi), ref.coeff(t, xi), atol=1e-12)


def test_t2_two_routes(series5, magnetic_cfg, magnetic_symbol):
    h0 = FreeSymbol(magnetic_symbol.lattice, 1.0)
    psi1 = series5.psi[0]
    route1 = LinComb([(0.5, nested_commutator(h0, [psi1, psi1]))])
    bnat = part(magnetic_symbol, "nat", magnetic_cfg.geometry(), magnetic_cfg.bank())
    route2 = LinComb([(-0.5, Commutator(bnat, psi1))])
    th, xi = _samples(series5, 300, seed=3)
    scale = 0.0
    for t in set(th):
        a, b = route1.coeff(t, xi), route2.coeff(t, xi)
        scale = max(scale, float(np.abs(b).max()))
        assert np.abs(a - b).max() <= 1e-10 * max(scale, 1e-300) + 1e-14
    assert np.allclose(series5.t_parts[2].coeff(th[0], xi), route1.coeff(th[0], xi))


def test_remainder_exponents():
    cfg = GaugeConfig(9, 40.0, 0.02, 1.0, 5 / 3, 0.6)
    assert cfg.sigma == pytest.approx(2 / 3)
    for j in range(1, 10):
        assert remainder_exponent(cfg, j).epsilon == pytest.approx(2 - j / 3)
    assert remainder_exponent(cfg, 6).epsilon == pytest.approx(0.0, abs=1e-12)
    assert remainder_exponent(cfg, 9).epsilon == pytest.approx(-1.0)
    r9 = remainder_exponent(cfg, 9)
    assert r9.beta_epsilon == pytest.approx(-0.6) and r9.scale == pytest.approx(40.0 ** -0.6)


def test_epsilon_monotone_iff_sigma_below_one():
    for alpha in (0.5, 1.0, 5 / 3, 2.5):
        for beta in (0.3, 0.6, 0.9):
            for m in (1.0, 1.5):
                try:
                    cfg = GaugeConfig(3, 40.0, 0.02, m, alpha, beta)
                except ConfigError:
                    continue
                eps = [cfg.epsilon(j) for j in range(1, 6)]
                assert (cfg.sigma < 1) == all(np.diff(eps) < 0)


def test_smallness_rejected():
    with pytest.raises(ConfigError, match="smallness"):
        GaugeConfig(2, 40.0, 0.02, 1.0, 3.0, 0.6)


def test_routes_agree(magnetic_cfg, magnetic_symbol):
    # rho = 20 keeps the exact truncation small
    geom = magnetic_cfg.geometry(rho=20.0)
    bank = magnetic_cfg.bank(20.0)
    cfg = magnetic_cfg.gauge(M=3, rho=20.0)
    k = np.array([0.21, 0.37])
    cut = exactness_radius(20.0, geom.r) + 0.5
    ms = build_matrix_series(magnetic_symbol, cfg, geom, bank, k, cut)
    sym = build_series(magnetic_symbol, cfg, geom, bank, with_bound=False)
    A_sym = symbol_matrix(sym.a1(), ms.index)  # a1() already carries h0
    diff = abs(A_sym - ms.a1()).max()
    assert diff <= 1e-9 * abs(ms.a1()).max()
    for l in range(1, 4):
        w, s = matrix_level_residual(ms, l)
        assert w <= 1e-9 * max(s, 1.0)


def test_conjugate_identity_and_invariance(z2, magnetic_cfg, magnetic_symbol):
    rng = np.random.default_rng(0)
    H = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = H + H.conj().T
    assert np.array_equal(conjugate_fiber(H, np.zeros((6, 6))), H)
    args = (magnetic_symbol, magnetic_cfg.gauge(M=2, rho=20.0), magnetic_cfg.geometry(rho=20.0),
            magnetic_cfg.bank(20.0), np.array([0.1, 0.4]), 14.0)
    ms = build_matrix_series(*args, check_exact=False)
    assert ms.psi_total().nnz > 0
    assert conjugation_invariance(*args) <= 1e-11
