"""Configuration-driven command line front end.

Commands:

    unimap build|evolve|echo-scan|attractors|sparsity-sweep|cascade-compare|
           reproduce-paper --config <path> [--out <dir>] [--workers <k>]

The JSON config is flat and fully defaulted; an empty config reproduces the
demo setup (quadratic demo map on (-1, 1), spatial basis with N = 200,
epsilon = 0.1, kappa = 0.1, Gaussian start at 0.5). Unknown keys are
rejected. Every run ends by writing a manifest (sorted key = value lines
with a sha256 checksum per emitted file), so outputs are reproducible and
verifiable from the manifest alone. Exit status: 0 on success, 2 on a
configuration error, 1 on any other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import basis as basis_mod
from . import maps as maps_mod
from .basis import BasisSpec, fourier_basis, spatial_basis
from .cascade import CascadeSystem, compare_errors, solve_cascade
from .errors import ConfigError, PipelineError, UnimapError
from .evolution import (
    InitSpec,
    MeasurementConfig,
    StateVector,
    evolve,
    find_attractors,
    find_echo_time,
    init_state,
)
from .maps import MapSpec, classical_orbit, push_forward_density
from .propagator import (
    PropagatorMatrix,
    compute_truncated_matrix,
    detect_blocks,
    filter_threshold,
    sparsity_stats,
    unitarize_blocks,
    unitarize_generator,
    unitarize_polar_global,
    write_matrix_dump,
)

COMMANDS = ("build", "evolve", "echo-scan", "attractors", "sparsity-sweep",
            "cascade-compare", "reproduce-paper")
UNITARIZATIONS = ("global_polar", "block_polar", "generator")
MAP_FAMILIES = {
    "identity": (),
    "linear": ("slope", "intercept"),
    "quadratic": ("A", "B", "C"),
    "polynomial": ("coeffs",),
    "gradient_descent": ("eta", "grad_coeffs"),
}

DEMO_MAP = {"family": "quadratic",
            "params": {"A": 0.25123, "B": 0.60123, "C": -0.10123}}
SNAPSHOT_TIMES = (0, 2, 4, 6, 8, 10)


@dataclass
class RunConfig:
    command: str
    map_family: str
    map_params: dict
    domain: tuple[float, float]
    basis_kind: str
    N: int
    epsilon: float
    epsilon_sweep: tuple[float, ...]
    unitarization: str
    init: InitSpec
    horizon: int
    kappa: float
    quad_order: int
    measurement: MeasurementConfig
    sampled_echo: bool
    outputs: str
    workers: int = 1
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# config parsing

def _expect(mapping: dict, key: str, types, default, context: str = ""):
    label = f"{context}.{key}" if context else key
    value = mapping.get(key, default)
    if value is None:
        raise ConfigError(label, "missing required value")
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types):
        raise ConfigError(label, f"expected {types}, got {type(value).__name__}")
    return value


def _reject_unknown(mapping: dict, allowed, context: str = ""):
    for key in mapping:
        if key not in allowed:
            label = f"{context}.{key}" if context else key
            raise ConfigError(label, "unknown key")


def load_config(path: Optional[str], command: str,
                out_override: Optional[str] = None, workers: int = 1) -> RunConfig:
    """Parse and validate a JSON config file; missing keys take demo defaults."""
    if path is None:
        data = {}
    else:
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return validate_config(data, command, out_override=out_override, workers=workers)


def validate_config(data: dict, command: str,
                    out_override: Optional[str] = None, workers: int = 1) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    _reject_unknown(data, {
        "command", "map", "domain", "basis", "epsilon", "epsilon_sweep",
        "unitarization", "init", "horizon", "kappa", "quad_order",
        "measurement", "sampled_echo", "outputs",
    })
    if "command" in data and data["command"] != command:
        raise ConfigError("command", f"config says {data['command']!r}, CLI says {command!r}")

    map_cfg = _expect(data, "map", dict, dict(DEMO_MAP))
    _reject_unknown(map_cfg, {"family", "params"}, "map")
    family = _expect(map_cfg, "family", str, DEMO_MAP["family"], "map")
    if family not in MAP_FAMILIES:
        raise ConfigError("map.family", f"must be one of {sorted(MAP_FAMILIES)}")
    params = _expect(map_cfg, "params", dict,
                     dict(DEMO_MAP["params"]) if family == "quadratic" else {}, "map")
    _reject_unknown(params, set(MAP_FAMILIES[family]), "map.params")

    domain_raw = _expect(data, "domain", list, [-1.0, 1.0])
    if len(domain_raw) != 2 or not all(isinstance(v, (int, float)) for v in domain_raw):
        raise ConfigError("domain", "must be a [min, max] pair of numbers")
    domain = (float(domain_raw[0]), float(domain_raw[1]))
    if not domain[0] < domain[1]:
        raise ConfigError("domain", "min must be below max")

    basis_cfg = _expect(data, "basis", dict, {"kind": "spatial", "N": 200})
    _reject_unknown(basis_cfg, {"kind", "N"}, "basis")
    basis_kind = _expect(basis_cfg, "kind", str, "spatial", "basis")
    if basis_kind not in ("spatial", "fourier"):
        raise ConfigError("basis.kind", "must be 'spatial' or 'fourier'")
    N = _expect(basis_cfg, "N", int, 200, "basis")
    if isinstance(N, bool) or N < 2:
        raise ConfigError("basis.N", "must be an integer >= 2")
    if command != "build" and basis_kind != "spatial":
        raise ConfigError("basis.kind", f"command {command!r} requires the spatial basis")

    epsilon = _expect(data, "epsilon", float, 0.1)
    if epsilon < 0:
        raise ConfigError("epsilon", "must be nonnegative")

    sweep_raw = _expect(data, "epsilon_sweep", list, [0.05, 0.1, 0.2])
    if not sweep_raw or not all(isinstance(v, (int, float)) and v >= 0 for v in sweep_raw):
        raise ConfigError("epsilon_sweep", "must be a non-empty list of nonnegative numbers")
    epsilon_sweep = tuple(float(v) for v in sweep_raw)

    unitarization = _expect(data, "unitarization", str, "block_polar")
    if unitarization not in UNITARIZATIONS:
        raise ConfigError("unitarization", f"must be one of {UNITARIZATIONS}")

    dx = (domain[1] - domain[0]) / N
    init_cfg = _expect(data, "init", dict,
                       {"kind": "gaussian", "center": 0.5, "width": 8 * dx})
    _reject_unknown(init_cfg, {"kind", "center", "width"}, "init")
    init_kind = _expect(init_cfg, "kind", str, "gaussian", "init")
    if init_kind not in ("gaussian", "flat", "delta_cell"):
        raise ConfigError("init.kind", "must be gaussian, flat, or delta_cell")
    center = init_cfg.get("center")
    width = init_cfg.get("width")
    if init_kind != "flat":
        if not isinstance(center, (int, float)):
            raise ConfigError("init.center", "must be a number")
        center = float(center)
    if init_kind == "gaussian":
        width = float(_expect(init_cfg, "width", float, 8 * dx, "init"))
        if width <= 0:
            raise ConfigError("init.width", "must be positive")
    init = InitSpec(kind=init_kind, center=center,
                    width=width if init_kind == "gaussian" else None)

    horizon = _expect(data, "horizon", int, 12)
    if isinstance(horizon, bool) or horizon < 1:
        raise ConfigError("horizon", "must be an integer >= 1")
    if command in ("echo-scan", "attractors", "reproduce-paper") and horizon < 3:
        raise ConfigError("horizon", f"command {command!r} needs horizon >= 3")

    kappa = _expect(data, "kappa", float, 0.1)
    if not (0.0 < kappa <= 1.0):
        raise ConfigError("kappa", "must lie in (0, 1]")

    quad_order = _expect(data, "quad_order", int, 16)
    if isinstance(quad_order, bool) or quad_order < 8:
        raise ConfigError("quad_order", "must be an integer >= 8")

    meas_cfg = _expect(data, "measurement", dict, {"M": 10000, "seed": 1})
    _reject_unknown(meas_cfg, {"M", "seed"}, "measurement")
    M = _expect(meas_cfg, "M", int, 10000, "measurement")
    if isinstance(M, bool) or M < 1:
        raise ConfigError("measurement.M", "must be an integer >= 1")
    seed = _expect(meas_cfg, "seed", int, 1, "measurement")
    if isinstance(seed, bool):
        raise ConfigError("measurement.seed", "must be an integer")

    sampled_echo = _expect(data, "sampled_echo", bool, False)

    outputs = out_override or _expect(data, "outputs", str, "out")
    if workers < 1:
        raise ConfigError("workers", "must be an integer >= 1")

    return RunConfig(
        command=command, map_family=family, map_params=dict(params),
        domain=domain, basis_kind=basis_kind, N=N, epsilon=epsilon,
        epsilon_sweep=epsilon_sweep, unitarization=unitarization, init=init,
        horizon=horizon, kappa=kappa, quad_order=quad_order,
        measurement=MeasurementConfig(M=M, seed=seed, kappa=kappa),
        sampled_echo=sampled_echo, outputs=outputs, workers=workers,
        raw=data,
    )


# ---------------------------------------------------------------------------
# object construction

def build_map(cfg: RunConfig) -> MapSpec:
    fam, p = cfg.map_family, cfg.map_params
    try:
        if fam == "identity":
            return maps_mod.identity_map(cfg.domain)
        if fam == "linear":
            return maps_mod.linear_map(float(p.get("slope", 1.0)),
                                       float(p.get("intercept", 0.0)), cfg.domain)
        if fam == "quadratic":
            return maps_mod.quadratic_map(float(p["A"]), float(p["B"]), float(p["C"]),
                                          cfg.domain)
        if fam == "polynomial":
            return maps_mod.polynomial_map([float(c) for c in p["coeffs"]], cfg.domain)
        if fam == "gradient_descent":
            gc = np.asarray([float(c) for c in p["grad_coeffs"]], dtype=float)
            g2 = gc[1:] * np.arange(1, len(gc))
            return maps_mod.gradient_descent_map(
                eta=float(p["eta"]),
                grad_f=lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), gc),
                grad2_f=lambda x: np.polynomial.polynomial.polyval(
                    np.asarray(x, dtype=float), g2 if len(g2) else np.zeros(1)),
                domain=cfg.domain,
            )
    except KeyError as exc:
        raise ConfigError(f"map.params.{exc.args[0]}", "missing for this family")
    raise ConfigError("map.family", f"unhandled family {fam!r}")


def build_basis(cfg: RunConfig) -> BasisSpec:
    if cfg.basis_kind == "spatial":
        return spatial_basis(cfg.N, cfg.domain)
    return fourier_basis(cfg.N, cfg.domain)


def _unitarize(V: PropagatorMatrix, cfg: RunConfig) -> PropagatorMatrix:
    if cfg.unitarization == "global_polar":
        return unitarize_polar_global(V)
    if cfg.unitarization == "generator":
        return unitarize_generator(V)
    Vf = filter_threshold(V, cfg.epsilon)
    return unitarize_blocks(Vf, detect_blocks(Vf))


# ---------------------------------------------------------------------------
# artifact writers

def _write_distributions(path, series, times, basis: BasisSpec) -> None:
    """Long-format snapshots: t, cell index, cell center, F = |psi_a|^2."""
    xs = basis_mod.centers(basis)
    with open(path, "w") as f:
        f.write("t,a,x,F\n")
        for t in times:
            amp = series.states[t]
            p2 = np.abs(amp) ** 2
            for a in range(len(amp)):
                f.write(f"{t},{a + 1},{xs[a]:.17g},{p2[a]:.17g}\n")


def _write_orbit(path, orbit) -> None:
    with open(path, "w") as f:
        f.write("t,x\n")
        for t, x in enumerate(orbit):
            f.write(f"{t},{x:.17g}\n")


def _write_attractors(path, peaks) -> None:
    with open(path, "w") as f:
        f.write("location,fwhm\n")
        for loc, width in peaks:
            f.write(f"{loc:.17g},{width:.17g}\n")


def _write_echo_report(path, report, kappa: float) -> None:
    payload = {
        "verdict": report.verdict,
        "t_c": report.t_c,
        "kappa": kappa,
        "evaluations": int(len(report.trace.t)),
        "Gamma": [float(g) for g in report.trace.Gamma],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_sweep(path, rows) -> None:
    with open(path, "w") as f:
        f.write("epsilon,nnz,max_row_nnz,max_col_nnz,n_blocks,median_block_width\n")
        for r in rows:
            f.write(",".join(str(v) if isinstance(v, int) else f"{v:.17g}" for v in r) + "\n")


# ---------------------------------------------------------------------------
# manifest

def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    elif isinstance(value, (list, tuple)):
        out[prefix] = json.dumps(list(value))
    else:
        out[prefix] = json.dumps(value)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def emit_manifest(out_dir: Path, cfg: RunConfig, files: list[str]) -> Path:
    """Write manifest.txt: every effective parameter plus output checksums."""
    effective = {
        "command": cfg.command,
        "map": {"family": cfg.map_family, "params": cfg.map_params},
        "domain": list(cfg.domain),
        "basis": {"kind": cfg.basis_kind, "N": cfg.N},
        "epsilon": cfg.epsilon,
        "epsilon_sweep": list(cfg.epsilon_sweep),
        "unitarization": cfg.unitarization,
        "init": {"kind": cfg.init.kind, "center": cfg.init.center,
                 "width": cfg.init.width},
        "horizon": cfg.horizon,
        "kappa": cfg.kappa,
        "quad_order": cfg.quad_order,
        "measurement": {"M": cfg.measurement.M, "seed": cfg.measurement.seed},
        "sampled_echo": cfg.sampled_echo,
        "workers": cfg.workers,
    }
    entries: dict[str, str] = {}
    _flatten("config", effective, entries)
    entries["version"] = json.dumps(__version__)
    for name in sorted(files):
        entries[f"file.{name}.sha256"] = json.dumps(_sha256(out_dir / name))
    path = out_dir / "manifest.txt"
    with open(path, "w") as f:
        for key in sorted(entries):
            f.write(f"{key} = {entries[key]}\n")
    return path


def verify_manifest(manifest_path) -> list[str]:
    """Recompute checksums named in a manifest; returns mismatched file names."""
    manifest_path = Path(manifest_path)
    out_dir = manifest_path.parent
    bad = []
    for line in manifest_path.read_text().splitlines():
        key, _, value = line.partition(" = ")
        if key.startswith("file.") and key.endswith(".sha256"):
            name = key[len("file."):-len(".sha256")]
            target = out_dir / name
            if not target.exists() or _sha256(target) != json.loads(value):
                bad.append(name)
    return bad


# ---------------------------------------------------------------------------
# pipelines

def _dump(out_dir: Path, M: PropagatorMatrix, label: str, files: list[str]) -> None:
    name = f"matrix_{M.basis.kind}_{label}.txt"
    write_matrix_dump(M, out_dir / name)
    files.append(name)


def _evolution_bundle(cfg: RunConfig, out_dir: Path, files: list[str],
                      snapshot_times=None, with_sampling=True):
    map_spec = build_map(cfg)
    basis = build_basis(cfg)
    V = compute_truncated_matrix(map_spec, basis, cfg.quad_order, cfg.workers)
    U = _unitarize(V, cfg)
    psi0 = init_state(cfg.init, basis)
    series = evolve(U, psi0, T=cfg.horizon, kappa=cfg.kappa,
                    measurement=cfg.measurement if with_sampling else None,
                    keep_states=True)
    series.to_csv(out_dir / "diagnostics.csv")
    files.append("diagnostics.csv")
    times = [t for t in (snapshot_times or range(cfg.horizon + 1)) if t <= cfg.horizon]
    _write_distributions(out_dir / "distributions.csv", series, times, basis)
    files.append("distributions.csv")
    if cfg.init.center is not None:
        orbit = classical_orbit(map_spec, cfg.init.center, cfg.horizon)
        _write_orbit(out_dir / "classical_orbit.csv", orbit)
        files.append("classical_orbit.csv")
    return map_spec, basis, V, U, psi0, series


def run(cfg: RunConfig) -> dict:
    """Execute the configured pipeline; returns {'files': [...], 'out_dir': ...}."""
    out_dir = Path(cfg.outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    stage = "setup"
    try:
        if cfg.command == "build":
            stage = "build"
            map_spec = build_map(cfg)
            basis = build_basis(cfg)
            V = compute_truncated_matrix(map_spec, basis, cfg.quad_order, cfg.workers)
            _dump(out_dir, V, "truncated", files)
            if cfg.epsilon > 0:
                Vf = filter_threshold(V, cfg.epsilon)
                _dump(out_dir, Vf, "filtered", files)
            stage = "unitarize"
            _dump(out_dir, _unitarize(V, cfg), cfg.unitarization, files)

        elif cfg.command == "evolve":
            stage = "evolve"
            _evolution_bundle(cfg, out_dir, files)

        elif cfg.command == "echo-scan":
            stage = "echo-scan"
            map_spec = build_map(cfg)
            basis = build_basis(cfg)
            V = compute_truncated_matrix(map_spec, basis, cfg.quad_order, cfg.workers)
            U = _unitarize(V, cfg)
            psi0 = init_state(cfg.init, basis)
            report = find_echo_time(U, psi0, cfg.measurement, cfg.horizon,
                                    sampled=cfg.sampled_echo)
            report.trace.to_csv(out_dir / "diagnostics.csv")
            files.append("diagnostics.csv")
            _write_echo_report(out_dir / "echo_report.json", report, cfg.kappa)
            files.append("echo_report.json")

        elif cfg.command == "attractors":
            stage = "attractors"
            map_spec = build_map(cfg)
            basis = build_basis(cfg)
            V = compute_truncated_matrix(map_spec, basis, cfg.quad_order, cfg.workers)
            U = _unitarize(V, cfg)
            peaks = find_attractors(U, cfg.measurement, cfg.horizon)
            _write_attractors(out_dir / "attractors.csv", peaks)
            files.append("attractors.csv")

        elif cfg.command == "sparsity-sweep":
            stage = "sparsity-sweep"
            map_spec = build_map(cfg)
            basis = build_basis(cfg)
            V = compute_truncated_matrix(map_spec, basis, cfg.quad_order, cfg.workers)
            rows = []
            for eps in cfg.epsilon_sweep:
                Vf = filter_threshold(V, eps)
                part = detect_blocks(Vf)
                stats = sparsity_stats(Vf, partition=part)
                widths = [len(b.cols) for b in part.blocks]
                rows.append((eps, stats.nnz, stats.max_row_nnz, stats.max_col_nnz,
                             len(part.blocks), float(np.median(widths))))
            _write_sweep(out_dir / "sweep.csv", rows)
            files.append("sweep.csv")

        elif cfg.command == "cascade-compare":
            stage = "cascade-compare"
            map_spec = build_map(cfg)
            basis = build_basis(cfg)
            V = compute_truncated_matrix(map_spec, basis, cfg.quad_order, cfg.workers)
            U = _unitarize(V, cfg)
            psi0 = init_state(cfg.init, basis)
            y = solve_cascade(CascadeSystem(V=V, psi0=psi0, T=cfg.horizon))
            useries = evolve(U, psi0, T=cfg.horizon, kappa=cfg.kappa, keep_states=True)
            u_traj = np.array(useries.states[1:])
            ref = _classical_reference(map_spec, basis, psi0, cfg.horizon)
            table = compare_errors(y, u_traj, ref)
            table.to_csv(out_dir / "cascade_errors.csv")
            files.append("cascade_errors.csv")

        elif cfg.command == "reproduce-paper":
            stage = "reproduce-paper"
            map_spec, basis, V, U, psi0, series = _evolution_bundle(
                cfg, out_dir, files, snapshot_times=SNAPSHOT_TIMES)
            _dump(out_dir, V, "truncated", files)
            _dump(out_dir, unitarize_polar_global(V), "global_polar", files)
            Vf = filter_threshold(V, cfg.epsilon)
            _dump(out_dir, unitarize_blocks(Vf, detect_blocks(Vf)), "block_polar", files)
            fb = fourier_basis(cfg.N, cfg.domain)
            Vf4 = compute_truncated_matrix(map_spec, fb, cfg.quad_order, cfg.workers)
            _dump(out_dir, Vf4, "truncated", files)
            _dump(out_dir, unitarize_polar_global(Vf4), "global_polar", files)
            stage = "echo-scan"
            report = find_echo_time(U, psi0, cfg.measurement, cfg.horizon,
                                    sampled=cfg.sampled_echo)
            _write_echo_report(out_dir / "echo_report.json", report, cfg.kappa)
            files.append("echo_report.json")
            stage = "attractors"
            peaks = find_attractors(U, cfg.measurement, max(cfg.horizon, 15))
            _write_attractors(out_dir / "attractors.csv", peaks)
            files.append("attractors.csv")

        else:  # unreachable; validate_config filters commands
            raise ConfigError("command", f"unknown command {cfg.command!r}")
    except UnimapError as exc:
        if isinstance(exc, (ConfigError, PipelineError)):
            raise
        raise PipelineError(f"stage '{stage}': {exc}") from exc

    manifest = emit_manifest(out_dir, cfg, files)
    return {"files": files + [manifest.name], "out_dir": str(out_dir)}


def _classical_reference(map_spec, basis, psi0, T) -> np.ndarray:
    """Amplitudes of the classically pushed-forward density at t = 1..T."""
    xs = basis_mod.centers(basis)
    dx = basis.dx
    F = np.abs(np.asarray(psi0.amplitudes)) ** 2 / dx
    out = np.empty((T, basis.N), dtype=complex)
    for t in range(T):
        F = push_forward_density(map_spec, F, xs)
        amp = np.sqrt(F * dx)
        nrm = np.linalg.norm(amp)
        out[t] = amp / nrm if nrm > 0 else amp
    return out


# ---------------------------------------------------------------------------
# entry point

def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="unimap",
        description="unitary emulation of nonlinear 1-D maps",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="path to a JSON config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker threads for the matrix build")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.command,
                          out_override=args.out, workers=args.workers)
        result = run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnimapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc!r}", file=sys.stderr)
        return 1
    for name in result["files"]:
        print(f"wrote {Path(result['out_dir']) / name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
