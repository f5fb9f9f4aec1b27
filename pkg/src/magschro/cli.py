"""Experiment orchestration: configs, dispatch, artifacts, and the CLI.

Configs are flat key-value text (dotted section keys, JSON-typed values),
with plain JSON accepted as an alternative input format.  Every run is
reproducible from its config and seed: all randomness flows from one
counter-based generator, and the data artifacts (CSV/JSON) are
byte-identical across reruns.  The manifest echoes the config, library
versions, the output file list, per-invariant verdicts, and wall-clock
timings (timings are the one non-reproducible entry).

Exit codes: 0 all verdicts pass, 1 invariant failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, magop, mesh, evolve, spectra, obsgram, multiplier, weights


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


KINDS = (
    "simulate", "resolvent-scan", "observability", "product-observability",
    "hautus", "multiplier-check", "carleman-certify", "carleman-probe",
    "gauge-check",
)


@dataclass(eq=False)
class ExperimentConfig:
    kind: str
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: unknown experiment kind {self.kind!r}")

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"{key}: required field missing")
        return self.values[key]

    # -- serialization ---------------------------------------------------

    def emit(self):
        lines = [f"kind = {json.dumps(self.kind)}"]
        for key in sorted(self.values):
            lines.append(f"{key} = {json.dumps(self.values[key], sort_keys=True)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text.startswith("{"):
            doc = json.loads(text)
            flat = _flatten(doc)
        else:
            flat = {}
            for lineno, raw in enumerate(text.splitlines(), 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {lineno}: expected 'key = value'")
                key, _, val = line.partition("=")
                key = key.strip()
                val = val.strip()
                try:
                    flat[key] = json.loads(val)
                except json.JSONDecodeError:
                    flat[key] = val
        kind = flat.pop("kind", None)
        if kind is None:
            raise ConfigError("kind: required field missing")
        return cls(kind=kind, values=flat)

    @classmethod
    def from_file(cls, path):
        return cls.parse(Path(path).read_text())


def _flatten(doc, prefix=""):
    out = {}
    for key, val in doc.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(_flatten(val, prefix=f"{name}."))
        else:
            out[name] = val
    return out


def _rng(config):
    seed = int(config.get("seed", 0))
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# object builders


def _build_grid(config):
    dim = int(config.get("grid.dim", 1))
    extents = config.get("grid.extents", 1.0)
    n = config.get("grid.n", 64)
    try:
        return mesh.build_grid(dim, extents, n)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _build_potential(grid, config):
    preset = config.get("potential.preset", "zero")
    if preset == "zero":
        return magop.MagneticPotential.zero(grid)
    if preset == "constant":
        vals = np.atleast_1d(np.asarray(config.get("potential.value", 0.0), dtype=float))
        if vals.size == 1:
            vals = np.repeat(vals, grid.dim)
        return magop.MagneticPotential.from_samples(
            grid, np.tile(vals, (grid.num_nodes, 1)))
    if preset == "sine":
        amp = float(config.get("potential.amplitude", 0.1))
        freq = float(config.get("potential.frequency", 2.0))
        phase = float(config.get("potential.phase", 0.0))

        def fn(pts):
            return amp * np.sin(freq * pts + phase)

        return magop.MagneticPotential.from_callable(grid, fn)
    if preset == "tabulated":
        vals = np.asarray(config.require("potential.values"), dtype=float)
        return magop.MagneticPotential.from_samples(grid, vals)
    raise ConfigError(f"potential.preset: unknown preset {preset!r}")


def _box_nodes(grid, spec, key):
    if spec == "all":
        return np.arange(grid.num_nodes)
    try:
        lo, hi = spec
        return grid.box_nodes(lo, hi)
    except Exception as exc:
        raise ConfigError(f"{key}: expected 'all' or [lo, hi] box, got {spec!r}") from exc


def _build_split(grid, config, required=False):
    x0 = config.get("split.x0")
    if x0 is None:
        if required:
            raise ConfigError(
                "boundary_split: split.x0 is required for this experiment")
        return None
    return mesh.split_boundary(grid, x0)


def _build_damping(grid, config, split):
    cpre = config.get("damping.c_preset", "none")
    dpre = config.get("damping.d_preset", "none")
    c = np.zeros(grid.num_nodes)
    c0 = 0.0
    omega = np.array([], dtype=int)
    if cpre == "constant":
        c0 = float(config.get("damping.c0", 1.0))
        c[:] = c0
        omega = np.arange(grid.num_nodes)
    elif cpre == "box":
        c0 = float(config.get("damping.c0", 1.0))
        omega = _box_nodes(grid, config.require("damping.omega"), "damping.omega")
        c[omega] = c0
    elif cpre != "none":
        raise ConfigError(f"damping.c_preset: unknown preset {cpre!r}")

    d = np.zeros(grid.num_nodes)
    d0 = 0.0
    gamma0_support = np.array([], dtype=int)
    if dpre != "none":
        if split is None or split.gamma0_empty:
            raise ConfigError("boundary_split: boundary damping needs a nonempty gamma0")
        if dpre == "constant":
            d0 = float(config.get("damping.d0", 1.0))
            d[split.gamma0] = d0
            gamma0_support = split.gamma0
        elif dpre == "m-dot-nu":
            mn = np.einsum("ij,ij->i", split.m[split.gamma0],
                           grid.normals[split.gamma0])
            d[split.gamma0] = mn
            d0 = float(np.min(mn[mn > 0])) if np.any(mn > 0) else 0.0
            gamma0_support = split.gamma0[mn >= d0]
        else:
            raise ConfigError(f"damping.d_preset: unknown preset {dpre!r}")
    return magop.DampingConfig(c=c, c0=c0, omega=omega, d=d, d0=d0,
                               gamma0_support=gamma0_support)


def _build_generator(config, kind=None):
    grid = _build_grid(config)
    pot = _build_potential(grid, config)
    kind = kind or config.get("generator", "A0")
    split = _build_split(grid, config, required=kind in ("A2", "A3"))
    damping = _build_damping(grid, config, split)
    try:
        gen = magop.assemble_generator(kind, grid, pot, damping=damping,
                                       split=split,
                                       scheme=config.get("scheme", "link-phase"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return gen


def _initial_state(gen, config, rng):
    preset = config.get("u0.preset", "sine-mode")
    grid = gen.grid
    coords = grid.coords[gen.state_idx]
    if preset == "sine-mode":
        k = np.atleast_1d(np.asarray(config.get("u0.mode", 1), dtype=int))
        if k.size == 1 and grid.dim == 2:
            k = np.repeat(k, 2)
        u = np.ones(gen.size, dtype=complex)
        for ax in range(grid.dim):
            u *= np.sin(k[ax] * np.pi * (coords[:, ax] - grid.origin[ax])
                        / grid.extents[ax])
        u *= np.sqrt(2.0) ** grid.dim
        return u
    if preset == "random-smooth":
        u = np.zeros(gen.size, dtype=complex)
        for _ in range(4):
            kk = rng.integers(1, 4, size=grid.dim)
            amp = rng.normal() + 1j * rng.normal()
            mode = np.ones(gen.size)
            for ax in range(grid.dim):
                mode = mode * np.sin(kk[ax] * np.pi
                                     * (coords[:, ax] - grid.origin[ax])
                                     / grid.extents[ax])
            u = u + amp * mode
        return u
    raise ConfigError(f"u0.preset: unknown preset {preset!r}")


def _mu_grid(config):
    spec = config.get("mu.grid")
    if spec is not None:
        return np.asarray(spec, dtype=float)
    start = float(config.get("mu.start", -200.0))
    stop = float(config.get("mu.stop", -5.0))
    count = int(config.get("mu.count", 40))
    return np.linspace(start, stop, count)


# ---------------------------------------------------------------------------
# experiment handlers (each returns (verdicts, outputs))


def _run_simulate(config, out, rng, jobs=1):
    gen = _build_generator(config)
    u0 = _initial_state(gen, config, rng)
    T = float(config.get("T", 1.0))
    dt_default = float(min(gen.grid.h)) ** 2 / 4.0
    dt = float(config.get("dt", dt_default))
    stride = int(config.get("snapshot_stride", max(1, int(round(T / dt)) // 200)))
    trace, traj = evolve.simulate(gen, u0, T, dt, snapshot_stride=stride)
    trace.export_csv(out / "energy.csv")
    evolve.export_snapshots(traj, out / "snapshots.bin", out / "snapshots.json")
    verdicts = {}
    if gen.kind in ("A0", "laplacian"):
        drift = max(trace.conservation["mass_norm_relative_drift"],
                    trace.conservation["stiffness_norm_relative_drift"])
        verdicts["conservation"] = {
            "pass": bool(drift <= 1e-9), "max_drift": drift}
    else:
        increases = float(np.max(np.diff(trace.energy), initial=-np.inf))
        verdicts["monotone_decay"] = {
            "pass": bool(increases <= 1e-12 * trace.energy[0]),
            "worst_increase": increases}
        try:
            fit = evolve.fit_exponential(trace)
            verdicts["exponential_fit"] = {
                "pass": True, "rate": fit.rate, "r_squared": fit.r_squared}
        except ValueError:
            verdicts["exponential_fit"] = {"pass": True, "rate": None}
    res = float(np.max(trace.midpoint_residual, initial=0.0))
    verdicts["dissipation_identity"] = {
        "pass": bool(res <= 1e-9 * max(trace.energy[0], 1.0)), "max_residual": res}
    return verdicts, ["energy.csv", "snapshots.bin", "snapshots.json"]


def _run_resolvent_scan(config, out, rng, jobs=1):
    gen = _build_generator(config)
    scan = spectra.scan_resolvent(gen, _mu_grid(config), jobs=jobs)
    scan.export_csv(out / "scan.csv")
    summary = {
        "C": scan.fit_c, "K": scan.fit_k, "p": scan.fit_p,
        "C_free": scan.fit_c_free, "K_free": scan.fit_k_free,
        "points": scan.fit_points, "failures": scan.failures,
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    finite = bool(np.all(np.isfinite(scan.norms[scan.ok]))) and not scan.failures
    verdicts = {"all_norms_finite": {"pass": finite,
                                     "failed_points": len(scan.failures)},
                "growth_fit": {"pass": True, "p_hat": scan.fit_p,
                               "K_hat": scan.fit_k}}
    return verdicts, ["scan.csv", "summary.json"]


def _run_observability(config, out, rng, jobs=1):
    gen = _build_generator(config, kind="A0")
    obs_kind = config.get("observation.kind", "interior-l2")
    if obs_kind == "boundary-conormal":
        split = _build_split(gen.grid, config, required=True)
        nodes = split.gamma0 if config.get("observation.part", "gamma0") == "gamma0" \
            else gen.grid.boundary_idx
    else:
        nodes = _box_nodes(gen.grid, config.get("observation.omega", "all"),
                           "observation.omega")
    try:
        obs = obsgram.Observation(obs_kind, nodes)
    except ValueError as exc:
        raise ConfigError(f"observation: {exc}") from exc
    T = float(config.get("T", 1.0))
    dt = float(config.get("dt", 0.01))
    rep = obsgram.gramian(gen, obs, T, dt,
                          stride=int(config.get("stride", 1)),
                          method=config.get("method", "eig"))
    (out / "report.json").write_text(rep.to_json())
    verdicts = {
        "gramian_psd": {"pass": bool(rep.lambda_min >= -1e-12 * max(rep.lambda_max, 1e-300)),
                        "lambda_min": rep.lambda_min},
        "quadrature": {"pass": bool(rep.quadrature_error_estimate <= 0.05),
                       "estimate": rep.quadrature_error_estimate},
    }
    return verdicts, ["report.json"]


def _run_product_observability(config, out, rng, jobs=1):
    n1 = int(config.get("grid.n1", 24))
    n2 = int(config.get("grid.n2", 24))
    L1 = float(config.get("grid.extent1", 1.0))
    L2 = float(config.get("grid.extent2", 1.0))
    g1 = mesh.build_grid(1, L1, n1)
    g2 = mesh.build_grid(1, L2, n2)
    gen1 = magop.assemble_generator("A0", g1, magop.MagneticPotential.zero(g1))
    gen2 = magop.assemble_generator("A0", g2, magop.MagneticPotential.zero(g2))
    omega1 = _box_nodes(g1, config.get("omega1", [[0.0], [0.3 * L1]]), "omega1")
    rep = obsgram.product_observability(
        gen1, gen2, omega1, T=float(config.get("T", 1.0)),
        dt=float(config.get("dt", 0.005)), tol=float(config.get("tol", 0.05)))
    (out / "comparison.json").write_text(rep.to_json())
    verdicts = {
        "tensor_identity": {"pass": bool(rep.tensor_residual <= 1e-12),
                            "residual": rep.tensor_residual},
        "product_bound": {"pass": rep.satisfied, "C_1D": rep.c_1d,
                          "C_2D": rep.c_2d},
    }
    return verdicts, ["comparison.json"]


def _run_hautus(config, out, rng, jobs=1):
    gen = _build_generator(config, kind="A0")
    omega = _box_nodes(gen.grid, config.get("omega", "all"), "omega")
    aleph0 = np.asarray(config.get("aleph0.grid", [0.0, 1e-4, 1e-2]), dtype=float)
    try:
        rep = spectra.hautus_sweep(gen, omega, _mu_grid(config), aleph0)
    except ValueError as exc:
        raise ConfigError(f"omega: {exc}") from exc
    doc = {
        "mus": rep.mus.tolist(),
        "aleph0_grid": rep.aleph0_grid.tolist(),
        "min_aleph1": [[None if not np.isfinite(v) else v for v in row]
                       for row in rep.min_aleph1],
        "global_aleph1": [None if not np.isfinite(v) else v
                          for v in rep.global_aleph1],
    }
    (out / "hautus.json").write_text(json.dumps(doc, sort_keys=True, indent=2))
    frontier_monotone = True
    for row in rep.min_aleph1:
        both = np.isfinite(row[:-1]) & np.isfinite(row[1:])
        rise = row[1:][both] - row[:-1][both]
        if rise.size and np.any(rise > 1e-6 * np.maximum(row[:-1][both], 1.0)):
            frontier_monotone = False
    verdicts = {"feasible": {"pass": rep.feasible_anywhere},
                "frontier_monotone": {"pass": frontier_monotone}}
    return verdicts, ["hautus.json"]


def _run_multiplier_check(config, out, rng, jobs=1):
    gen = _build_generator(config, kind="A0")
    u0 = _initial_state(gen, config, rng)
    T = float(config.get("T", 0.25))
    dt = float(config.get("dt", 5e-4))
    trace, traj = evolve.simulate(gen, u0, T, dt, snapshot_stride=1)
    x0 = config.get("multiplier.x0", [0.0] * gen.grid.dim)
    fld = multiplier.MultiplierField.radial(gen.grid, traj.times, x0)
    rep = multiplier.multiplier_identity_residual(traj, gen.potential, fld)
    (out / "residuals.json").write_text(rep.to_json())
    tol = float(config.get("tolerance", 0.1))
    verdicts = {"identity": {"pass": bool(rep.residual <= tol * rep.scale),
                             "residual": rep.residual, "scale": rep.scale}}
    return verdicts, ["residuals.json"]


def _weight_from_config(grid, config):
    preset = config.get("weight.preset", "quadratic")
    if preset == "quadratic":
        return weights.quadratic_weight(grid, config.require("weight.x0"))
    if preset == "linear":
        return weights.linear_weight(grid, config.get("weight.direction", [1.0] * grid.dim),
                                     offset=float(config.get("weight.offset", 2.0)))
    if preset == "collar":
        omega = _box_nodes(grid, config.require("weight.collar"), "weight.collar")
        return weights.construct_psi_G(grid, omega, config.require("weight.x0"))
    raise ConfigError(f"weight.preset: unknown preset {preset!r}")


def _run_carleman_certify(config, out, rng, jobs=1):
    grid = _build_grid(config)
    w = _weight_from_config(grid, config)
    lam = float(config.get("weight.lambda", 1.0))
    beta = float(config.get("weight.beta", 1.0))
    region = _box_nodes(grid, config.get("region", "all"), "region")
    pc = weights.check_pseudoconvexity(w, region)
    cyl = weights.make_cylinder(grid, ns=int(config.get("cylinder.ns", grid.n[0])))
    wext = weights.cylinder_extend(w.with_lambda(lam), cyl, beta)
    region_cyl = np.concatenate([region + i * grid.num_nodes
                                 for i in range(cyl.ns)])
    tau_grid = np.asarray(config.get("tau.grid", [1.0, 2.0, 4.0]), dtype=float)
    se = weights.check_subellipticity(wext, region_cyl, tau_grid,
                                      samples_per_node=int(config.get("samples", 16)),
                                      seed=int(config.get("seed", 0)))
    doc = {
        "min_grad": pc.min_grad,
        "pseudoconvexity_margin": pc.margin,
        "pseudoconvexity_certified": pc.certified,
        "subellipticity_min_bracket": se.min_bracket,
        "subellipticity_certified": se.certified,
        "failing_witnesses": ([] if se.witness is None else [se.witness]) + pc.failures,
    }
    (out / "certification.json").write_text(json.dumps(doc, sort_keys=True, indent=2))
    verdicts = {"pseudoconvexity": {"pass": bool(pc.margin > 0), "margin": pc.margin},
                "subellipticity": {"pass": se.certified, "min_bracket": se.min_bracket}}
    return verdicts, ["certification.json"]


def _run_carleman_probe(config, out, rng, jobs=1):
    grid = _build_grid(config)
    pot = _build_potential(grid, config)
    w = _weight_from_config(grid, config)
    lam = float(config.get("weight.lambda", 1.0))
    beta = float(config.get("weight.beta", 1.0))
    cyl = weights.make_cylinder(grid, ns=int(config.get("cylinder.ns", grid.n[0])))
    wext = weights.cylinder_extend(w.with_lambda(lam), cyl, beta)
    op = weights.CylinderOperator(cyl, potential=pot)
    count = int(config.get("bumps", 20))
    funcs = weights.bump_functions(cyl, count, seed=int(config.get("seed", 0)),
                                   cylinder=True)
    tau_hi = 0.5 / cyl.min_h
    taus = np.asarray(config.get("tau.grid",
                                 np.linspace(5.0, tau_hi, 8).tolist()), dtype=float)
    rep = weights.carleman_probe(op, wext, funcs, taus)
    rep.export_csv(out / "probe.csv")
    summary = {"trend_slope": rep.trend_slope, "trend_stderr": rep.trend_stderr,
               "bounded": rep.bounded, "samples": rep.samples_used}
    (out / "probe_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    verdicts = {"bounded_ratio": {"pass": rep.bounded, "slope": rep.trend_slope}}
    return verdicts, ["probe.csv", "probe_summary.json"]


def _run_gauge_check(config, out, rng, jobs=1):
    import scipy.sparse as sp

    gen = _build_generator(config, kind=config.get("generator", "A0"))
    grid = gen.grid
    psi = np.sin(2.0 * grid.coords[:, 0]) * float(config.get("gauge.amplitude", 0.5))
    conj = magop.gauge_transform(gen, psi)
    shifted = magop.potential_plus_edge_gradient(gen.potential, psi)
    direct = magop.assemble_generator(gen.kind, grid, shifted,
                                      damping=gen.damping, split=gen.split)
    res = float(sp.linalg.norm(conj.matrix - direct.matrix)
                / sp.linalg.norm(direct.matrix))
    e1 = spectra.eigenvalues_dense(gen)
    e2 = spectra.eigenvalues_dense(conj)
    e1 = e1[np.argsort(e1.imag)]
    e2 = e2[np.argsort(e2.imag)]
    spec_res = float(np.max(np.abs(e1 - e2)) / np.max(np.abs(e1)))
    doc = {"conjugation_residual": res, "spectrum_residual": spec_res}
    if grid.dim == 1:
        anti = magop.edge_antiderivative_1d(grid, gen.potential)
        red = magop.gauge_transform(gen, -anti)
        zero = magop.assemble_generator(
            gen.kind, grid, magop.MagneticPotential.zero(grid),
            damping=gen.damping, split=gen.split)
        doc["reduction_residual"] = float(
            sp.linalg.norm(red.matrix - zero.matrix) / sp.linalg.norm(zero.matrix))
    (out / "gauge.json").write_text(json.dumps(doc, sort_keys=True, indent=2))
    verdicts = {
        "conjugation": {"pass": bool(res <= 1e-12), "residual": res},
        "spectra_agree": {"pass": bool(spec_res <= 1e-10), "residual": spec_res},
    }
    if "reduction_residual" in doc:
        verdicts["reduction"] = {"pass": bool(doc["reduction_residual"] <= 1e-12),
                                 "residual": doc["reduction_residual"]}
    return verdicts, ["gauge.json"]


_HANDLERS = {
    "simulate": _run_simulate,
    "resolvent-scan": _run_resolvent_scan,
    "observability": _run_observability,
    "product-observability": _run_product_observability,
    "hautus": _run_hautus,
    "multiplier-check": _run_multiplier_check,
    "carleman-certify": _run_carleman_certify,
    "carleman-probe": _run_carleman_probe,
    "gauge-check": _run_gauge_check,
}


def run(config, out_dir=None, jobs=1):
    """Run one experiment; write artifacts and manifest; return exit code."""
    out = Path(out_dir if out_dir is not None else config.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    rng = _rng(config)
    t0 = time.perf_counter()
    try:
        verdicts, outputs = _HANDLERS[config.kind](config, out, rng, jobs=jobs)
    except ConfigError:
        raise
    elapsed = time.perf_counter() - t0
    manifest = {
        "kind": config.kind,
        "config": dict(sorted(config.values.items())),
        "version": __version__,
        "outputs": outputs,
        "verdicts": verdicts,
        "timings": {"wall_seconds": elapsed},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    ok = all(v.get("pass", False) for v in verdicts.values())
    return 0 if ok else 1


def report(manifest_path):
    """One-line verdicts of a finished run."""
    path = Path(manifest_path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
        verdicts = doc["verdicts"]
        kind = doc["kind"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"corrupt manifest {path}: {exc}") from exc
    lines = [f"experiment: {kind}"]
    for name, v in sorted(verdicts.items()):
        status = "PASS" if v.get("pass") else "FAIL"
        detail = ", ".join(f"{k}={v[k]:.3g}" if isinstance(v[k], float) else f"{k}={v[k]}"
                           for k in sorted(v) if k != "pass")
        lines.append(f"{name}: {status}" + (f" ({detail})" if detail else ""))
    return "\n".join(lines)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="magschro",
        description="Damped magnetic Schrodinger laboratory experiments",
    )
    parser.add_argument("kind", choices=list(KINDS) + ["report"])
    parser.add_argument("target", nargs="?", default=None,
                        help="manifest path (report mode only)")
    parser.add_argument("--config", help="config file (flat key-value or JSON)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    if args.kind == "report":
        target = args.target or args.config
        if target is None:
            parser.error("report needs a manifest path")
        try:
            print(report(target))
        except (FileNotFoundError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0

    if args.config is None:
        parser.error("--config is required")
    try:
        config = ExperimentConfig.from_file(args.config)
        if config.kind != args.kind:
            raise ConfigError(
                f"kind: config says {config.kind!r}, command line says {args.kind!r}")
        return run(config, out_dir=args.out, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
