"""Command line interface: configuration, run orchestration and output files.

Usage::

    python3 -m ecsupg.cli run --config case.yaml [--output-dir out] [--scheme KIND] [--picard N]
    python3 -m ecsupg.cli verify

Output directory layout after ``run``::

    diagnostics.csv        one row per step, including step 0
    snapshots/step_NNNNNN.bin   raw coefficients, restartable with read_snapshot
    snapshots/step_NNNNNN.csv   fields sampled on a uniform grid
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import cases
from .diagnostics import DiagnosticsRecord
from .discretization import Discretization
from .mesh import build_mesh
from .operators import CoercivityWarning
from .physics import ModelConstants, State
from .timestepping import RunConfig, SchemeKind, run

log = logging.getLogger("ecsupg")


class ConfigError(ValueError):
    """Invalid configuration file."""


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

_CASE_KEYS = {
    "straka": {"resolution", "k"},
    "rising_bubble": {"resolution", "k"},
    "rest": {"nx", "nz", "Lx", "Lz", "k", "theta0"},
    "planar_swe": {"n", "L", "f0", "H0", "u0", "eps", "k", "with_perturbation"},
}
_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
_CONST_KEYS = {"g", "c_v", "R", "p0"}
_TOP_KEYS = {"case", "constants", "sample_per_cell"} | _RUN_KEYS


def _load_yaml(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"YAML parse error in {path}{where}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def config_from_dict(data: dict):
    """Validate a configuration mapping.

    Returns ``(case_setup, run_config, constant_overrides, sample_per_cell)``.
    Run parameters not given fall back to the case's recommended values;
    ``tau`` defaults to ``dt / 2``.
    """
    data = dict(data)
    name = data.get("case")
    if name not in cases.CASES:
        raise ConfigError(f"key 'case': expected one of {sorted(cases.CASES)}, got {name!r}")
    allowed = _TOP_KEYS | _CASE_KEYS[name]
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) for case {name!r}: {', '.join(unknown)}")
    overrides = data.get("constants") or {}
    if not isinstance(overrides, dict):
        raise ConfigError("key 'constants' must be a mapping")
    bad = sorted(set(overrides) - _CONST_KEYS)
    if bad:
        raise ConfigError(f"unknown key(s) in 'constants': {', '.join(bad)}")
    case_kw = {k: data[k] for k in _CASE_KEYS[name] if k in data}
    try:
        if name == "planar_swe":
            if "g" in overrides:
                case_kw["g"] = float(overrides["g"])
            if "dt" in data:
                case_kw["dt"] = float(data["dt"])
            setup = cases.planar_swe_balanced(**case_kw)
        else:
            c = ModelConstants(**{k: float(v) for k, v in overrides.items()})
            if name == "rest" and "dt" in data:
                case_kw["dt"] = float(data["dt"])
            setup = cases.CASES[name](constants=c, **case_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid case parameters: {exc}") from exc
    run_kw = {k: data[k] for k in _RUN_KEYS if k in data}
    try:
        cfg = setup.config.with_(**run_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run parameters: {exc}") from exc
    spc = data.get("sample_per_cell", 2)
    if not isinstance(spc, int) or spc < 1:
        raise ConfigError("key 'sample_per_cell' must be a positive integer")
    return setup, cfg, overrides, spc


def parse_config(path):
    """Read and validate a YAML configuration file (see :func:`config_from_dict`)."""
    return config_from_dict(_load_yaml(Path(path)))


# ----------------------------------------------------------------------------
# diagnostics table
# ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_diagnostics(records, path) -> None:
    """CSV with a fixed header, 17 significant digits and LF line endings."""
    cols = DiagnosticsRecord.columns()
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in records:
            fh.write(",".join(_fmt(v) for v in r.as_row()) + "\n")


def read_diagnostics(path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != DiagnosticsRecord.columns():
            raise ValueError(f"unexpected diagnostics header {header}")
        out = []
        for row in reader:
            out.append(DiagnosticsRecord(int(row[0]), *(float(v) for v in row[1:])))
    return out


# ----------------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------------

_MAGIC = "ECSUPG-SNAPSHOT 1"


def _header(state: State) -> str:
    d = state.disc
    m = d.mesh
    lines = [
        _MAGIC,
        f"model {d.model}",
        f"mesh {m.nx} {m.nz} {float(m.Lx).hex()} {float(m.Lz).hex()} {int(m.periodic_z)}",
        f"degree {d.k}",
        "spaces " + " ".join(f"{k}={d.spaces[k].family}" for k in ("u", "r", "t")),
        f"time {float(state.time).hex()}",
        f"blocks u:{len(state.u)} r:{len(state.rho)} t:{len(state.theta)}",
        "END",
    ]
    return "\n".join(lines) + "\n"


def write_snapshot(state: State, path) -> None:
    """Text header followed by little-endian float64 blocks for ``u``, ``rho``, ``theta``."""
    with open(path, "wb") as fh:
        fh.write(_header(state).encode("ascii"))
        for arr in (state.u, state.rho, state.theta):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path, disc: Discretization | None = None) -> State:
    """Inverse of :func:`write_snapshot`.

    With ``disc`` given, the header must describe the same mesh, degree and
    model; otherwise a matching discretisation is built from the header.
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"\nEND\n")
    if not raw.startswith(_MAGIC.encode()) or end < 0:
        raise ValueError(f"{path} is not a snapshot file")
    head = raw[: end + 5].decode("ascii")
    fields_ = dict(line.split(" ", 1) for line in head.splitlines()[1:-1])
    nx, nz, Lx, Lz, per = fields_["mesh"].split()
    nx, nz, Lx, Lz, per = int(nx), int(nz), float.fromhex(Lx), float.fromhex(Lz), bool(int(per))
    k, model = int(fields_["degree"]), fields_["model"]
    if disc is None:
        disc = Discretization(build_mesh(nx, nz, Lx, Lz, periodic_z=per), k, model)
    else:
        m = disc.mesh
        if (m.nx, m.nz, float(m.Lx), float(m.Lz), m.periodic_z, disc.k, disc.model) != (nx, nz, Lx, Lz, per, k, model):
            raise ValueError("snapshot mesh, degree or model does not match the discretisation")
    expect = "spaces " + " ".join(f"{s}={disc.spaces[s].family}" for s in ("u", "r", "t"))
    if "spaces " + fields_["spaces"] != expect:
        raise ValueError("snapshot space families do not match")
    sizes = [int(b.split(":")[1]) for b in fields_["blocks"].split()]
    body = np.frombuffer(raw[end + 5 :], dtype="<f8")
    if body.size != sum(sizes):
        raise ValueError("snapshot payload size does not match header")
    u, rho, theta = np.split(body.astype(np.float64), np.cumsum(sizes)[:-1])
    return State(disc, u, rho, theta, float.fromhex(fields_["time"]))


def sample_fields(state: State, per_cell: int = 2):
    """Evaluate ``(x, z, u_x, u_z, rho, theta)`` on a uniform grid of cell-interior points."""
    d = state.disc
    m = d.mesh
    pts = (np.arange(per_cell) + 0.5) / per_cell
    cells = np.arange(m.num_cells)
    cols = {}
    for space, key, coeffs, name in (
        ("u", "x", state.u, "u_x"),
        ("u", "z", state.u, "u_z"),
        ("r", "val", state.rho, "rho"),
        ("t", "val", state.theta, "theta"),
    ):
        V = d.spaces[space]
        E = V.global_operator(V.reference_tabulation(pts, pts)[key], cells)
        cols[name] = E @ coeffs
    zz, xx = np.meshgrid(pts, pts, indexing="ij")
    org = m.cell_origins()
    x = (org[:, 0:1] + xx.ravel()[None, :] * m.dx).ravel()
    z = (org[:, 1:2] + zz.ravel()[None, :] * m.dz).ravel()
    return {"x": x, "z": z, **cols}


def write_sampled(state: State, path, per_cell: int = 2) -> None:
    s = sample_fields(state, per_cell)
    names = list(s)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*(s[n] for n in names)):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_run(args) -> int:
    setup, cfg, _, per_cell = parse_config(args.config)
    if args.scheme is not None:
        cfg = cfg.with_(scheme=SchemeKind.parse(args.scheme))
    if args.picard is not None:
        cfg = cfg.with_(picard_iters=args.picard)
    out = Path(args.output_dir)
    snapdir = out / "snapshots"
    snapdir.mkdir(parents=True, exist_ok=True)
    log.info("case %s, %s, scheme %s, dt %g, %d steps", setup.name, setup.disc, cfg.scheme.value, cfg.dt, cfg.n_steps)

    def progress(n, z, steplog):
        log.debug("step %d residual %.3e", n, steplog.final)

    records, snapshots, _ = run(setup, cfg, callback=progress)
    write_diagnostics(records, out / "diagnostics.csv")
    for n, z in snapshots:
        write_snapshot(z, snapdir / f"step_{n:06d}.bin")
        write_sampled(z, snapdir / f"step_{n:06d}.csv", per_cell)
    last = records[-1]
    print(f"steps={last.step} rel_energy_err={last.rel_energy_err:.3e} mass={last.mass:.17g}")
    return 0


def verify_suite(seed: int = 0):
    """Structural checks as ``(name, value, threshold, passed)`` tuples."""
    rng = np.random.default_rng(seed)
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoercivityWarning)
        _verify_into(results, rng)
    return results


def _verify_into(results, rng):
    from .diagnostics import check_bracket_antisymmetry, coercivity_check, complex_check

    for k in (2, 3):
        div_r, curl_r = complex_check(build_mesh(4, 4, 1.0, 1.0, periodic_z=True), k)
        results.append((f"complex k={k}", max(div_r, curl_r), 1e-12, max(div_r, curl_r) <= 1e-12))
    for label, setup in (
        ("euler", cases.resting_slice(4, 4, k=2)),
        ("swe", cases.planar_swe_balanced(n=4, L=4.0e5, k=2)),
    ):
        z = perturbed_state(setup, rng)
        tau = 0.5 * setup.config.dt
        a = check_bracket_antisymmetry(z, setup.constants, tau, "ec")
        results.append((f"antisymmetry {label}", a, 1e-12, a <= 1e-12))
        r = coercivity_check(setup.disc, tau, z.u)
        results.append((f"coercivity {label}", r.lambda_min - r.bound, -1e-10, r.holds))


def perturbed_state(setup, rng, u_scale: float = 20.0, rho_rel: float = 0.05, theta_rel: float = 0.02) -> State:
    """Random perturbation of a case's initial state (velocity wall dofs kept at zero)."""
    d = setup.disc
    z = setup.state.copy()
    z.u = z.u + u_scale * rng.standard_normal(len(z.u))
    z.u[d.u_wall] = 0.0
    z.rho = z.rho * (1.0 + rho_rel * rng.uniform(-1, 1, len(z.rho)))
    z.theta = z.theta * (1.0 + theta_rel * rng.uniform(-1, 1, len(z.theta)))
    return z


def cmd_verify(args) -> int:
    ok = True
    for name, value, thr, passed in verify_suite(args.seed):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {value:.3e} (threshold {thr:.0e})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecsupg", description="Energy-conserving SUPG compatible FEM runs")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a case from a YAML configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir", default="output")
    r.add_argument("--scheme", choices=[k.value for k in SchemeKind])
    r.add_argument("--picard", type=int)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run the structural verification suite")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
