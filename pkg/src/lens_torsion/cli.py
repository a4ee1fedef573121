"""Command-line entry point: ``lens-torsion {oracle-check,solve,sweep,geometry}``.

Exit codes: 0 success, 1 a check or certificate failed, 2 bad input
(inadmissible geometry, mesh too coarse, empty amplitude list).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .fem import SolverError, normal_derivative_on, solve_mesh
from .identities import certificate, certificate_json
from .mesh import MeshError, refined, triangulate, triangulate_polygon
from .oracle import oracle_identity_report, reports_to_json
from .stability import (THEOREMS, certify_sweep, records_to_csv, records_to_json, run_sweep,
                        theorem_exponent)

DEFAULT_EPS = tuple(float(e) for e in np.geomspace(0.005, 0.16, 6))


@dataclass
class RunConfig:
    N: int = 2
    R: float = 1.0
    azimuth: float | None = None
    eps: list[float] = dc_field(default_factory=list)
    h: float = 0.1
    refine: int = 3
    tol: float = 1e-9
    theta: float = math.pi / 6
    a: float | None = None  # cone height; the lens default scales with R
    delta0: float | None = None
    fixture: str = "lens"
    theorems: list[str] = dc_field(default_factory=lambda: list(THEOREMS))
    domain: dict | None = None  # a full DomainSpec document overrides N, R, azimuth, eps

    def spec(self) -> geo.DomainSpec:
        if self.domain is not None:
            return geo.DomainSpec.from_dict(self.domain)
        base = geo.make_symmetric_cap(self.N, self.R, self.azimuth, cone_theta=self.theta, cone_a=self.a)
        eps = self.eps[0] if self.eps else 0.0
        return geo.make_perturbed_domain(base, eps) if eps else base

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _parse_eps(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    return [float(t) for t in text.split(",") if t.strip()]


def build_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    known = RunConfig.__dataclass_fields__
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**data)
    for name in ("N", "R", "azimuth", "h", "refine", "tol", "theta", "a", "delta0", "fixture"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "eps", None) is not None:
        cfg.eps = _parse_eps(args.eps)
    if getattr(args, "theorems", None):
        cfg.theorems = [t.strip() for t in args.theorems.split(",")]
    if cfg.h <= 0 or cfg.refine < 0:
        raise ValueError("h must be positive and refine nonnegative")
    return cfg


def _outdir(args) -> Path | None:
    if not args.out:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(out: Path | None, name: str, text: str):
    if out is not None:
        (out / name).write_text(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_oracle_check(cfg: RunConfig, out: Path | None) -> int:
    try:
        reports = oracle_identity_report(cfg.N, cfg.R, cfg.azimuth, tol=max(cfg.tol, 1e-15))
    except geo.GeometryError as exc:
        print(f"inadmissible geometry: {exc}", file=sys.stderr)
        return 2
    print(f"{'identity':<18} {'lhs':>24} {'rhs':>24} {'residual':>11} {'quad err':>10}")
    ok = True
    for r in reports:
        print(f"{r.name:<18} {r.lhs:>24.17g} {r.rhs:>24.17g} {r.residual:>11.3e} {r.quad_error_estimate:>10.2e}")
        ok = ok and r.residual <= cfg.tol
    _write(out, "oracle.json", reports_to_json(reports) + "\n")
    print("PASS" if ok else f"FAIL: some residual exceeds tol={cfg.tol:g}")
    return 0 if ok else 1


def cmd_solve(cfg: RunConfig, out: Path | None) -> int:
    try:
        spec = cfg.spec()
        mesh = refined(triangulate(spec, cfg.h), cfg.refine)[-1]
    except (geo.GeometryError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        field = solve_mesh(mesh)
    except SolverError as exc:
        print(f"solver diagnostic: {exc}", file=sys.stderr)
        return 1
    cert = certificate(field)
    _write(out, "mesh.txt", mesh.to_text())
    _write(out, "field.csv", field.to_csv())
    flux = normal_derivative_on(field, geo.SIGMA).to_csv() + normal_derivative_on(field, geo.T_ARC).to_csv(header=False)
    _write(out, "flux.csv", flux)
    _write(out, "certificate.json", certificate_json(cert) + "\n")
    _write(out, "domain.json", spec.to_json() + "\n")
    q = cert["quantities"]
    print(f"h={q['h']:.5g}  dofs={field.space.ndof}  R={q['R']:.10g}  z=({q['z'][0]:.10g}, {q['z'][1]:.10g})")
    print(f"deficit={q['deficit']:.5e}  gap={q['gap']:.5e}  L={q['L']:.6g}  m={q['m']:.6g}")
    for c in cert["checks"]:
        flag = "n/a " if not c["applicable"] else ("PASS" if c["passed"] else "FAIL")
        print(f"  {flag}  {c['name']:<30} lhs={c['lhs']:.4e} rhs={c['rhs']:.4e}")
    for d in field.diagnostics:
        print(f"diagnostic: {d}", file=sys.stderr)
    return 0 if cert["passed"] and not field.diagnostics else 1


def gnuplot_script(theorems_certs, csv_name: str = "sweep.csv", eta: float = 0.1) -> str:
    lines = [
        "# log gap against log deficit with the theorem shapes (c from the certificates)",
        "set datafile separator ','",
        "set logscale xy",
        "set key top left",
        "set xlabel 'deficit ||u_nu^2 - R^2||_1'",
        "set ylabel 'gap rho_e - rho_i'",
        "set terminal pngcairo size 800,600",
        "set output 'sweep.png'",
    ]
    plots = [f"'{csv_name}' using 6:7 skip 1 with linespoints title 'sweep'"]
    for c in theorems_certs:
        if c.verdict == "not applicable" or not math.isfinite(c.c_min):
            continue
        p = theorem_exponent(c.theorem, 2, eta)
        logged = c.theorem in ("T1.1", "T1.2")
        shape = f"x**{p!r}" + ("*(log(x**-0.5) > 1 ? log(x**-0.5) : 1)" if logged else "")
        plots.append(f"{c.c_min!r}*{shape} title '{c.theorem} bound'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: RunConfig, out: Path | None, eps_given: bool) -> int:
    eps = cfg.eps if eps_given or cfg.eps else list(DEFAULT_EPS)
    if not eps:
        print("error: empty amplitude list", file=sys.stderr)
        return 2
    bad = [t for t in cfg.theorems if t not in THEOREMS]
    if bad:
        print(f"error: unknown theorem(s) {bad}", file=sys.stderr)
        return 2
    try:
        base = geo.make_symmetric_cap(cfg.N, cfg.R, cfg.azimuth, cone_theta=cfg.theta, cone_a=cfg.a)
        if cfg.N != 2:
            raise geo.GeometryError("sweeps need the planar finite-element path (N = 2)")
        sweep = run_sweep(base, eps, h_target=cfg.h, refinements=cfg.refine)
    except (geo.GeometryError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    certs = certify_sweep(sweep, cfg.theorems)
    _write(out, "sweep.csv", records_to_csv(sweep.records))
    _write(out, "records.json", records_to_json(sweep.records) + "\n")
    _write(out, "certificates.json", json.dumps([c.to_dict() for c in certs], indent=2, sort_keys=True) + "\n")
    _write(out, "sweep.json", json.dumps(sweep.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out, "sweep.gp", gnuplot_script(certs))
    print(records_to_csv(sweep.records), end="")
    print(f"noise floor: deficit {sweep.deficit_floor:.3e}, gap {sweep.gap_floor:.3e}")
    for r in sweep.records:
        if r.diagnostic:
            print(f"eps={r.eps:g}: {r.diagnostic}", file=sys.stderr)
    ok = True
    for c in certs:
        slope = "-" if c.slope is None else f"{c.slope:.4f}"
        print(f"{c.theorem}: {c.verdict}  c_min={c.c_min:.5g}  slope={slope}  exponent={c.exponent:.4f}"
              + (f"  ({c.reason})" if c.reason else ""))
        ok = ok and c.verdict in ("PASS", "not applicable")
    return 0 if ok else 1


def _fixture(cfg: RunConfig):
    if cfg.fixture == "lens":
        spec = cfg.spec()
        poly = geo.boundary_polyline(spec, 128)
        return poly, triangulate(spec, cfg.h), spec.cone_theta, spec.cone_a
    if cfg.fixture == "slit":
        poly = geo.slit_square_polyline()
    elif cfg.fixture == "dumbbell":
        poly = geo.dumbbell_polyline()
    elif cfg.fixture == "disk":
        poly = geo.disk_polyline(0.5, 128)
    else:
        raise geo.GeometryError(f"unknown fixture {cfg.fixture!r}")
    # the polygon fixtures have features of width ~0.1; mesh them finely enough
    return poly, triangulate_polygon(poly, min(cfg.h, 0.02)), cfg.theta, 0.1 if cfg.a is None else cfg.a


def cmd_geometry(cfg: RunConfig, out: Path | None, require_cone: bool) -> int:
    try:
        poly, mesh, theta, a = _fixture(cfg)
    except (geo.GeometryError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    delta0 = cfg.delta0 if cfg.delta0 is not None else a / 4
    d = geo.diameter(poly.vertices)
    s0 = geo.sigma0(theta, a, delta0)
    b = geo.john_constant_bound(theta, a, d, delta0)
    cone = geo.cone_condition_check(poly, theta, a)
    print(f"fixture={cfg.fixture}  theta={theta:.6g}  a={a:.6g}  delta0={delta0:.6g}  diameter={d:.6g}")
    print(f"sigma0={s0:.10g}")
    print(f"john_bound={b:.10g}")
    print(f"cone_check={'PASS' if cone.passed else 'FAIL'}  vertices_checked={cone.checked}")
    if cone.witness:
        print(f"witness={json.dumps(cone.witness)}")
    grid = np.linspace(0.0, s0, 6).tolist()  # the last entry is sigma0 itself
    rows = ["sigma,connected,components,elements"]
    print(f"{'sigma':>12} {'connected':>9} {'components':>10} {'elements':>8}")
    for s in grid:
        ps = geo.parallel_set_connected(mesh, s)
        print(f"{s:>12.6g} {str(ps.connected):>9} {ps.components:>10} {ps.n_elements:>8}")
        rows.append(f"{s!r},{ps.connected},{ps.components},{ps.n_elements}")
    _write(out, "parallel_sets.csv", "\n".join(rows) + "\n")
    _write(out, "geometry.json", json.dumps({
        "fixture": cfg.fixture, "theta": theta, "a": a, "delta0": delta0, "diameter": d,
        "sigma0": s0, "john_bound": b, "cone_pass": cone.passed, "cone_witness": cone.witness,
    }, indent=2, sort_keys=True) + "\n")
    if require_cone and not cone.passed:
        return 1
    return 0


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--out", help="output directory (config echo and artifacts)")
    common.add_argument("--h", type=float, help="target mesh size")
    common.add_argument("--refine", type=int, help="number of uniform refinements")
    common.add_argument("--eps", help="comma-separated perturbation amplitudes")
    common.add_argument("--tol", type=float, help="oracle residual tolerance")
    common.add_argument("--N", type=int, help="dimension")
    common.add_argument("--R", type=float, help="cap radius")
    common.add_argument("--azimuth", type=float, help="polar angle of the cap centre (N = 2)")
    common.add_argument("--theta", type=float, help="cone half-opening")
    common.add_argument("--a", type=float, help="cone height")
    common.add_argument("--delta0", type=float, help="connectivity threshold for parallel sets")

    p = argparse.ArgumentParser(prog="lens-torsion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("oracle-check", parents=[common], help="mesh-free identity check on a symmetric lens")
    sub.add_parser("solve", parents=[common], help="solve on one lens and certify the identities")
    sw = sub.add_parser("sweep", parents=[common], help="perturbation sweep with theorem certificates")
    sw.add_argument("--theorems", help=f"comma-separated subset of {','.join(THEOREMS)}")
    g = sub.add_parser("geometry", parents=[common], help="cone, John and parallel-set checks")
    g.add_argument("--fixture", choices=["lens", "slit", "dumbbell", "disk"])
    g.add_argument("--require-cone", action="store_true", help="exit 1 when the cone check fails")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _outdir(args)
    _write(out, "config.json", cfg.to_json() + "\n")
    if args.command == "oracle-check":
        return cmd_oracle_check(cfg, out)
    if args.command == "solve":
        return cmd_solve(cfg, out)
    if args.command == "sweep":
        return cmd_sweep(cfg, out, args.eps is not None)
    return cmd_geometry(cfg, out, args.require_cone)


if __name__ == "__main__":
    sys.exit(main())
