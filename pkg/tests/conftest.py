import math

import numpy as np
import pytest

from floquetlab.config import load_preset
from floquetlab.lattice import make_lattice
from floquetlab.resonance import Geometry, ResonanceParams

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def z2():
    """Γ = (2πZ)², so Γ† = Z²."""
    return make_lattice(TWO_PI * np.eye(2))


@pytest.fixture(scope="session")
def hexagonal():
    return make_lattice([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])


@pytest.fixture(scope="session")
def magnetic_cfg():
    return load_preset("magnetic2d")


@pytest.fixture(scope="session")
def magnetic_symbol(magnetic_cfg):
    return magnetic_cfg.build_symbol()


@pytest.fixture(scope="session")
def worked_geom(z2):
    """ρ = 100, α = (0.4, 0.8), r = 1.5: the worked congruence-class setting."""
    params = ResonanceParams(100.0, 0.02, (0.4, 0.8), r_override=1.5)
    return Geometry(z2, params, validate=False)


def pytest_terminal_summary(terminalreporter):
    """Collect the PASS/FAIL criterion lines printed by the acceptance suite."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "") != "call":
                continue
            lines += [l for l in rep.capstdout.splitlines() if " criterion " in l]
    if lines:
        terminalreporter.section("acceptance criteria")
        for l in sorted(lines, key=lambda s: s.split("criterion ")[1]):
            terminalreporter.write_line(l)
