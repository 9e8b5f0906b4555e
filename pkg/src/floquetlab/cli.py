"""Command line front end: ``floquetlab <command> --config ...``.

Each command writes into ``<out>/<command>/``, refuses to touch an existing
non-empty directory, and finishes by writing ``manifest.json`` with the config
digest, per-stage wall clock and a SHA-256 of every emitted file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, FloquetLabError, InternalError, ParamsInconsistent, SizeCapError

EXIT_CONFIG = 2
EXIT_ASSERT = 3
EXIT_SIZE = 4


# ---------------------------------------------------------------------------
# output helpers


def fmt_float(x: float) -> dict:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return {"decimal": str(x), "hex": str(x)}
    return {"decimal": f"{x:.17g}", "hex": x.hex()}


def encode(obj):
    """Recursively replace floats by {decimal, hex} pairs."""
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return encode(obj.tolist())
    return obj


class Run:
    def __init__(self, cfg: RunConfig, command: str, out: str, argv: dict):
        self.cfg = cfg
        self.command = command
        self.dir = Path(out) / command
        if self.dir.exists() and any(self.dir.iterdir()):
            raise ConfigError(f"output directory {self.dir} already holds results; "
                              "choose a fresh --out (outputs are write-once)")
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict = {}
        self.stages: dict = {}
        self.argv = argv

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except FloquetLabError as exc:
            raise type(exc)(f"stage {name}: {exc}") from exc
        finally:
            self.stages[name] = time.perf_counter() - t0

    def _write(self, name: str, data: bytes):
        path = self.dir / name
        if path.exists():
            raise InternalError(f"refusing to overwrite {path}")
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def json(self, name: str, payload):
        self._write(name, (json.dumps(encode(payload), indent=2, sort_keys=True) + "\n").encode())

    def csv(self, name: str, header: list, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)
        self._write(name, buf.getvalue().encode())

    def finish(self):
        manifest = {
            "command": self.command,
            "config_digest": self.cfg.digest(),
            "config_source": self.cfg.source,
            "code_version": __version__,
            "arguments": self.argv,
            "stages_seconds": self.stages,
            "files": self.files,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _float_cells(x: float) -> list:
    f = fmt_float(x)
    return [f["decimal"], f["hex"]]


# ---------------------------------------------------------------------------
# shared options


def common(fn):
    fn = click.option("--config", "config_path", required=True, help="YAML config or preset name.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the RNG seed.")(fn)
    fn = click.option("--threads", type=int, default=None, help="Worker threads.")(fn)
    fn = click.option("--out", default=None, help="Output root directory.")(fn)
    return fn


def _setup(config_path, seed, threads, out, **overrides) -> tuple[RunConfig, str]:
    cfg = load_config(config_path)
    cfg = cfg.with_overrides(seed=seed, threads=threads, **overrides)
    root = out or cfg.out or "runs"
    return cfg, root


def _guard(fn):
    """Map library errors to exit codes."""

    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except SizeCapError as exc:
            click.echo(f"size cap: {exc}", err=True)
            sys.exit(EXIT_SIZE)
        except (InternalError, ParamsInconsistent, AssertionError) as exc:
            click.echo(f"assertion failed: {exc}", err=True)
            sys.exit(EXIT_ASSERT)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """Floquet-Bloch laboratory for periodic pseudo-differential operators."""


# ---------------------------------------------------------------------------
# spectral commands


def _energy(cfg: RunConfig, lam):
    return float(lam) if lam is not None else cfg.rho ** (2 * cfg.m)


def _window(cfg: RunConfig, lam: float) -> float:
    return cfg.half_window if cfg.half_window is not None else max(1.0, 0.002 * lam)


@main.command()
@common
@click.option("--lambda", "lam", type=float, default=None, help="Centre energy (default rho^{2m}).")
@click.option("--grid", type=int, default=None, help="k-grid points per axis.")
@click.option("--rho", type=float, default=None)
@_guard
def spectrum(config_path, seed, threads, out, lam, grid, rho):
    """Per-k eigenvalues near an energy, CSV."""
    from .spectrum import build_fiber, eig_window, k_grid, map_parallel, truncation_shift
    cfg, root = _setup(config_path, seed, threads, out, k_grid=grid, rho=rho)
    run = Run(cfg, "spectrum", root, {"lambda": lam, "grid": grid, "rho": rho})
    lat = cfg.lattice()
    sym = cfg.build_symbol(lat)
    lam = _energy(cfg, lam)
    W = _window(cfg, lam)
    ks = k_grid(lat, cfg.k_grid)
    with run.stage("diagonalize"):
        wins = map_parallel(lambda k: eig_window(build_fiber(lat, sym, k, cfg.cutoff, cfg.m), lam - W, lam + W),
                            list(ks), cfg.threads)
    rows = []
    for i, (k, w) in enumerate(zip(ks, wins)):
        for j, v in enumerate(w.values):
            rows.append([i] + [f"{c:.17g}" for c in k] + [w.first + j + 1] + _float_cells(v))
    header = ["k_index"] + [f"k{i + 1}" for i in range(lat.dim)] + ["band", "value", "value_hex"]
    run.csv("eigenvalues.csv", header, rows)
    with run.stage("truncation"):
        shift = truncation_shift(lat, sym, ks[0], cfg.cutoff, cfg.m, lam - W, lam + W)
    run.json("summary.json", {"lambda": lam, "half_window": W, "cutoff": cfg.cutoff,
                              "k_points": len(ks), "truncation_shift_first_k": shift})
    run.finish()
    click.echo(f"wrote {run.dir}")


@main.command()
@common
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--grid", type=int, default=None)
@click.option("--rho", type=float, default=None)
@_guard
def bands(config_path, seed, threads, out, lam, grid, rho):
    """Band edges over the k-grid for bands meeting a window, JSON."""
    from .spectrum import build_fiber, eig_window, k_grid, map_parallel
    cfg, root = _setup(config_path, seed, threads, out, k_grid=grid, rho=rho)
    run = Run(cfg, "bands", root, {"lambda": lam, "grid": grid, "rho": rho})
    lat = cfg.lattice()
    sym = cfg.build_symbol(lat)
    lam = _energy(cfg, lam)
    W = _window(cfg, lam)
    ks = k_grid(lat, cfg.k_grid)
    with run.stage("diagonalize"):
        wins = map_parallel(lambda k: eig_window(build_fiber(lat, sym, k, cfg.cutoff, cfg.m), lam - W, lam + W),
                            list(ks), cfg.threads)
    edges: dict = {}
    for k, w in zip(ks, wins):
        for j, v in enumerate(w.values):
            b = w.first + j + 1
            e = edges.setdefault(b, {"band": b, "min": v, "max": v, "k_min": k.tolist(), "k_max": k.tolist()})
            if v < e["min"]:
                e["min"], e["k_min"] = v, k.tolist()
            if v > e["max"]:
                e["max"], e["k_max"] = v, k.tolist()
    run.json("bands.json", {"lambda": lam, "half_window": W, "note": "edges seen inside the window only",
                            "bands": [edges[b] for b in sorted(edges)]})
    run.finish()
    click.echo(f"wrote {run.dir}")


@main.command()
@common
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--grid", type=int, default=None)
@click.option("--rho", type=float, default=None)
@_guard
def overlap(config_path, seed, threads, out, lam, grid, rho):
    """Band overlap ζ(λ) over the k-grid, JSON."""
    from .spectrum import band_overlap, k_grid
    cfg, root = _setup(config_path, seed, threads, out, k_grid=grid, rho=rho)
    run = Run(cfg, "overlap", root, {"lambda": lam, "grid": grid, "rho": rho})
    lat = cfg.lattice()
    sym = cfg.build_symbol(lat)
    lam = _energy(cfg, lam)
    ks = k_grid(lat, cfg.k_grid)
    with run.stage("overlap"):
        rep = band_overlap(lat, sym, lam, ks, cfg.cutoff, cfg.m, _window(cfg, lam), cfg.threads)
    payload = rep.as_dict()
    payload["note"] = "grid value, a lower bound for the overlap over all quasi-momenta"
    payload["k_points"] = len(ks)
    run.json("overlap.json", payload)
    run.finish()
    click.echo(json.dumps({"lambda": lam, "zeta": rep.zeta, "capped": rep.capped}))


@main.command("g")
@common
@click.option("--xi", required=True, help="Comma separated momentum, e.g. 37.3,95.1")
@click.option("--rho", type=float, default=None)
@_guard
def g_command(config_path, seed, threads, out, xi, rho):
    """Evaluate the labeling function g at one momentum, JSON."""
    from .spectrum import BandFunction, ModelSymbol
    from .resonance import classify, resolve_critical
    cfg, root = _setup(config_path, seed, threads, out, rho=rho)
    run = Run(cfg, "g", root, {"xi": xi, "rho": rho})
    lat = cfg.lattice()
    try:
        point = np.array([float(c) for c in xi.split(",")])
    except ValueError:
        raise ConfigError(f"--xi: cannot parse {xi!r}") from None
    if len(point) != lat.dim:
        raise ConfigError(f"--xi needs {lat.dim} components")
    geom = cfg.geometry(lattice=lat)
    band = BandFunction(ModelSymbol(geom, cfg.build_symbol(lat), cfg.m, cfg.bank()))
    with run.stage("evaluate"):
        p = resolve_critical(point, geom)
        val = band.value(p, nudge=False)
        lab = classify(p, geom)
    run.json("g.json", {"xi": p.tolist(), "g": val, "label": band.label(p), "class_size": len(lab.cls),
                        "zone": lab.subspace.label(), "zone_dim": lab.tier})
    run.finish()
    click.echo(json.dumps({"xi": p.tolist(), "g": val}))


@main.command("resonance-map")
@common
@click.option("--grid", type=int, default=200, show_default=True)
@click.option("--rho", type=float, default=None)
@_guard
def resonance_map_cmd(config_path, seed, threads, out, grid, rho):
    """Zone labels on a square ξ-grid over [-3ρ/2, 3ρ/2]^2, CSV."""
    from .resonance import classify_many
    cfg, root = _setup(config_path, seed, threads, out, rho=rho)
    run = Run(cfg, "resonance-map", root, {"grid": grid, "rho": rho})
    lat = cfg.lattice()
    if lat.dim != 2:
        raise ConfigError("resonance-map draws a planar grid and needs d = 2")
    geom = cfg.geometry(lattice=lat)
    ax = np.linspace(-1.5 * cfg.rho, 1.5 * cfg.rho, grid)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    with run.stage("classify"):
        idx, subs = classify_many(pts, geom)
    rows = [[f"{p[0]:.17g}", f"{p[1]:.17g}", subs[i].label(), subs[i].dim] for p, i in zip(pts, idx)]
    run.csv("zones.csv", ["xi1", "xi2", "zone", "dim"], rows)
    counts: dict = {}
    for i in idx:
        counts[subs[i].label()] = counts.get(subs[i].label(), 0) + 1
    run.json("summary.json", {"points": len(pts), "zones": counts})
    run.finish()
    click.echo(f"wrote {run.dir}")


# ---------------------------------------------------------------------------
# gauge and volumes


@main.command()
@common
@click.option("--depth", type=int, default=None, help="Gauge depth M.")
@click.option("--samples", type=int, default=1000, show_default=True, help="Residual sample points.")
@click.option("--rho", type=float, default=None)
@click.option("--skip-eigen", is_flag=True, help="Skip the A1 eigenvalue comparison.")
@_guard
def gauge(config_path, seed, threads, out, depth, samples, rho, skip_eigen):
    """Gauge series report: residuals, ψ norms, ε table, eigenvalue agreement, JSON."""
    from .gauge import (build_series, eigen_disagreement, epsilon_table, exactness_radius, psi_norms,
                        residual_table)
    cfg, root = _setup(config_path, seed, threads, out, M=depth, rho=rho)
    run = Run(cfg, "gauge", root, {"depth": depth, "samples": samples, "rho": rho})
    lat = cfg.lattice()
    b = cfg.build_symbol(lat)
    if b is None:
        raise ConfigError("the gauge report needs a nonzero symbol")
    geom = cfg.geometry(lattice=lat)
    bank = cfg.bank()
    gc = cfg.gauge()
    with run.stage("series"):
        series = build_series(b, gc, geom, bank)
    with run.stage("residuals"):
        res = residual_table(series, samples, cfg.seed)
    with run.stage("norms"):
        norms = psi_norms(series)
    report = {"M": gc.M, "rho": cfg.rho, "sigma": gc.sigma, "residuals": res, "psi_norms": norms,
              "psi_norm_ratios": [norms[i + 1] / norms[i] if norms[i] else None for i in range(len(norms) - 1)],
              "epsilon": epsilon_table(gc), "norm_b": series.norm_b,
              "remainder_scale_uncertified": series.remainder_bound}
    if not skip_eigen:
        lam = cfg.rho ** (2 * cfg.m)
        W = _window(cfg, lam)
        cut = max(exactness_radius(cfg.rho, geom.r) + 0.5, min(cfg.cutoff, 2 * cfg.rho))
        with run.stage("eigen"):
            k = lat.dual_basis @ np.full(lat.dim, 0.25)
            rows = eigen_disagreement(b, [cfg.gauge(M=M) for M in range(1, gc.M + 1)], geom, bank,
                                      k, cut, lam - W, lam + W)
        report["eigen_agreement"] = rows
    run.json("gauge.json", report)
    run.finish()
    click.echo(f"wrote {run.dir}")


@main.command()
@common
@click.option("--samples", type=int, default=None)
@click.option("--rho-grid", default=None, help="Comma separated rho values.")
@_guard
def volumes(config_path, seed, threads, out, samples, rho_grid):
    """Monte-Carlo volumes of the level sets of g and their scaling fits, JSON."""
    from .measure import volume_study
    grid = None
    if rho_grid:
        try:
            grid = tuple(float(r) for r in rho_grid.split(","))
        except ValueError:
            raise ConfigError(f"--rho-grid: cannot parse {rho_grid!r}") from None
    cfg, root = _setup(config_path, seed, threads, out, samples=samples, rho_grid=grid)
    run = Run(cfg, "volumes", root, {"samples": samples, "rho_grid": rho_grid})
    with run.stage("sampling"):
        report = volume_study(cfg)
    run.json("volumes.json", report)
    run.finish()
    click.echo(f"wrote {run.dir}")


if __name__ == "__main__":
    main()
