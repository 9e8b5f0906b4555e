"""Run configuration: YAML files, packaged presets and validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .expr import compile_coeff
from .gauge import GaugeConfig
from .lattice import Lattice, make_lattice
from .resonance import Geometry, ResonanceParams
from .symbols import CutoffBank, PeriodicSymbol, magnetic_schrodinger, symbol_from_modes

PRESETS = ("magnetic2d", "separable2d", "free2d")


@dataclass(frozen=True)
class RunConfig:
    name: str
    basis: tuple
    m: float
    symbol: Any
    rho: float
    kappa: float
    beta: float
    alphas: tuple
    alpha: float
    M: int
    cutoff: float
    k_grid: int
    half_window: float | None
    samples: int
    rho_grid: tuple
    epsilon: float
    seed: int
    threads: int = 1
    out: str | None = None
    source: str = field(default="", compare=False)

    # -- derived objects
    def lattice(self) -> Lattice:
        return make_lattice(np.array(self.basis, dtype=float))

    def build_symbol(self, lattice: Lattice | None = None) -> PeriodicSymbol | None:
        lat = lattice or self.lattice()
        return build_symbol(self.symbol, lat, self.alpha, self.beta)

    def params(self, rho: float | None = None) -> ResonanceParams:
        return ResonanceParams(float(rho if rho is not None else self.rho), self.kappa, tuple(self.alphas))

    def geometry(self, rho: float | None = None, lattice: Lattice | None = None) -> Geometry:
        return Geometry(lattice or self.lattice(), self.params(rho))

    def bank(self, rho: float | None = None) -> CutoffBank:
        return CutoffBank(float(rho if rho is not None else self.rho), self.beta)

    def gauge(self, M: int | None = None, rho: float | None = None) -> GaugeConfig:
        return GaugeConfig(int(M if M is not None else self.M), float(rho if rho is not None else self.rho),
                           self.kappa, self.m, self.alpha, self.beta)

    def delta(self, rho: float) -> float:
        """δ = ρ^{2m - 2 - 2ε}."""
        return float(rho) ** (2 * self.m - 2 - 2 * self.epsilon)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "rho" in kw and "cutoff" not in kw:
            kw["cutoff"] = 2.0 * float(kw["rho"]) if self.cutoff == 2.0 * self.rho else self.cutoff
        cfg = replace(self, **kw)
        validate(cfg)
        return cfg

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("source", None)
        d.pop("out", None)
        d.pop("threads", None)
        return d

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing


def _number(v, path: str) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            val = compile_coeff(v, 1)(np.zeros((1, 1)))[0]
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if abs(val.imag) > 0:
            raise ConfigError(f"{path}: expected a real number, got {v!r}")
        return float(val.real)
    raise ConfigError(f"{path}: expected a number, got {type(v).__name__}")


def _complex(v, path: str) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", ""))
        except ValueError:
            try:
                return complex(compile_coeff(v, 1)(np.zeros((1, 1)))[0])
            except ConfigError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}: expected a complex number, got {v!r}")


def _theta(v, d: int, path: str) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != d:
        raise ConfigError(f"{path}: theta must be a list of {d} integers")
    out = []
    for i, c in enumerate(v):
        if isinstance(c, bool) or not isinstance(c, int):
            raise ConfigError(f"{path}[{i}]: theta coordinates must be integers")
        out.append(int(c))
    return tuple(out)


def build_symbol(entry, lattice: Lattice, alpha: float, beta: float) -> PeriodicSymbol | None:
    if entry is None:
        return None
    d = lattice.dim
    kind = entry.get("kind", "modes")
    if kind == "magnetic_schrodinger":
        a_modes = {}
        for i, e in enumerate(entry.get("a_modes", []) or []):
            th = _theta(e.get("theta"), d, f"symbol.a_modes[{i}].theta")
            vec = e.get("vec")
            if not isinstance(vec, list) or len(vec) != d:
                raise ConfigError(f"symbol.a_modes[{i}].vec must be a list of {d} numbers")
            a_modes[th] = [_complex(c, f"symbol.a_modes[{i}].vec") for c in vec]
        v_modes = {}
        for i, e in enumerate(entry.get("v_modes", []) or []):
            th = _theta(e.get("theta"), d, f"symbol.v_modes[{i}].theta")
            v_modes[th] = _complex(e.get("coeff"), f"symbol.v_modes[{i}].coeff")
        try:
            return magnetic_schrodinger(lattice, a_modes, v_modes, alpha=alpha, beta=beta)
        except ValueError as exc:
            raise ConfigError(f"symbol: {exc}") from None
    if kind == "modes":
        modes = []
        for i, e in enumerate(entry.get("modes", []) or []):
            th = _theta(e.get("theta"), d, f"symbol.modes[{i}].theta")
            coeff = e.get("coeff")
            if coeff is None:
                raise ConfigError(f"symbol.modes[{i}]: missing coeff")
            if not isinstance(coeff, str):
                coeff = _complex(coeff, f"symbol.modes[{i}].coeff")
            modes.append({"theta": th, "coeff": coeff})
        try:
            return symbol_from_modes(lattice, modes, alpha, beta)
        except ValueError as exc:
            raise ConfigError(f"symbol: {exc}") from None
    raise ConfigError(f"symbol.kind: unknown kind {kind!r} (use modes or magnetic_schrodinger)")


def _section(raw: dict, key: str) -> dict:
    v = raw.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return v


def parse_config(raw: dict, source: str = "") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    lat_sec = _section(raw, "lattice")
    basis = lat_sec.get("basis")
    if basis is None:
        raise ConfigError("lattice.basis is required")
    if not isinstance(basis, list) or not all(isinstance(r, list) for r in basis):
        raise ConfigError("lattice.basis must be a list of rows")
    rows = tuple(tuple(_number(c, f"lattice.basis[{i}][{j}]") for j, c in enumerate(r))
                 for i, r in enumerate(basis))
    d = len(rows)
    m = _number(raw.get("m", 1), "m")
    res = _section(raw, "resonance")
    rho = _number(res.get("rho", 40), "resonance.rho")
    kappa = _number(res.get("kappa", 0.02 if d == 2 else 0.008), "resonance.kappa")
    alphas = res.get("alphas", [0.6, 0.8] if d == 2 else [0.6, 0.75, 0.9])
    if not isinstance(alphas, list):
        raise ConfigError("resonance.alphas must be a list")
    alphas = tuple(_number(a, f"resonance.alphas[{i}]") for i, a in enumerate(alphas))
    beta = _number(res.get("beta", alphas[0] if alphas else 0.6), "resonance.beta")
    sym = raw.get("symbol")
    if sym is not None and not isinstance(sym, dict):
        raise ConfigError("symbol: expected a mapping")
    order = _number((sym or {}).get("order", 0), "symbol.order")
    alpha = _number((sym or {}).get("alpha", order / beta), "symbol.alpha")
    gauge = _section(raw, "gauge")
    spectral = _section(raw, "spectrum")
    vol = _section(raw, "volumes")
    cutoff = _number(spectral.get("cutoff", 2 * rho), "spectrum.cutoff")
    hw = spectral.get("half_window")
    grid = vol.get("rho_grid", [20, 40, 80])
    if not isinstance(grid, list):
        raise ConfigError("volumes.rho_grid must be a list")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    cfg = RunConfig(
        name=str(raw.get("name", Path(source).stem if source else "run")),
        basis=rows, m=m, symbol=sym, rho=rho, kappa=kappa, beta=beta, alphas=alphas, alpha=alpha,
        M=int(_number(gauge.get("M", 5), "gauge.M")),
        cutoff=cutoff,
        k_grid=int(_number(spectral.get("k_grid", 32), "spectrum.k_grid")),
        half_window=None if hw is None else _number(hw, "spectrum.half_window"),
        samples=int(_number(vol.get("samples", 1_000_000), "volumes.samples")),
        rho_grid=tuple(_number(r, f"volumes.rho_grid[{i}]") for i, r in enumerate(grid)),
        epsilon=_number(vol.get("epsilon", 0.1), "volumes.epsilon"),
        seed=int(seed),
        threads=int(_number(raw.get("threads", 1), "threads")),
        out=raw.get("out"),
        source=source,
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    d = len(cfg.basis)
    if any(len(r) != d for r in cfg.basis):
        raise ConfigError("lattice.basis must be square")
    try:
        lat = cfg.lattice()
    except ValueError as exc:
        raise ConfigError(f"lattice.basis: {exc}") from None
    if cfg.m <= 0:
        raise ConfigError("m must be positive")
    if len(cfg.alphas) != d:
        raise ConfigError(f"resonance.alphas needs {d} entries for a {d}-dimensional lattice")
    msgs = cfg.params().violations(lat)
    if msgs:
        raise ConfigError("resonance parameters: " + "; ".join(msgs))
    if abs(cfg.beta - cfg.alphas[0]) > 1e-12:
        raise ConfigError(f"beta = alpha_1 required (got beta = {cfg.beta:g}, alpha_1 = {cfg.alphas[0]:g})")
    if not cfg.beta * (cfg.alpha - 2) < 2 * cfg.m - 2:
        raise ConfigError(
            f"smallness condition beta*(alpha - 2) < 2m - 2 violated: "
            f"{cfg.beta * (cfg.alpha - 2):.6g} >= {2 * cfg.m - 2:.6g}")
    if not d * d * cfg.kappa < (2 * cfg.m - cfg.alpha * cfg.beta) * cfg.alphas[-1]:
        raise ConfigError("d^2*kappa < (2m - alpha*beta)*alpha_d violated")
    if cfg.M < 1:
        raise ConfigError("gauge.M must be at least 1")
    if cfg.cutoff <= 0:
        raise ConfigError("spectrum.cutoff must be positive")
    if cfg.k_grid < 1:
        raise ConfigError("spectrum.k_grid must be at least 1")
    if cfg.samples < 1:
        raise ConfigError("volumes.samples must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    for r in cfg.rho_grid:
        sub = cfg.params(r).violations(lat)
        if sub:
            raise ConfigError(f"volumes.rho_grid entry {r:g}: " + "; ".join(sub))
    cfg.build_symbol(lat)


def _read_text(path: str) -> tuple[str, str]:
    p = Path(path)
    if p.is_file():
        return p.read_text(encoding="utf-8"), str(p)
    stem = p.name[:-5] if p.name.endswith(".yaml") else p.name
    if stem in PRESETS:
        res = resources.files("floquetlab") / "presets" / f"{stem}.yaml"
        return res.read_text(encoding="utf-8"), f"preset:{stem}"
    raise ConfigError(f"config file {path!r} not found (presets: {', '.join(PRESETS)})")


def load_config(path: str) -> RunConfig:
    text, source = _read_text(path)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse {source}{where}: {getattr(exc, 'problem', exc)}") from None
    return parse_config(raw or {}, source)


def load_preset(name: str) -> RunConfig:
    return load_config(name)
