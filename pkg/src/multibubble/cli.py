"""Command-line pipeline: validate, find-critical, solve, collision-scan,
green-eval.

All scientific parameters live in a single JSON configuration file; flags
only select the command, paths, and verbosity.  Every run writes a manifest
(config hash, package/library versions, seed, timestamp) next to its
outputs; scientific outputs contain no timestamps, so a rerun with the same
seed is byte-identical.

Exit codes: 0 success; 1 usage or I/O; 2 the requested point count cannot be
split over the sources; 3 a source weight hits a forbidden integer; 4 a
numerical failure downstream.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, geometry
from .energy import Configuration, SingularSet
from .errors import IntegerWeightObstruction, MultibubbleError, NoSplitting
from .green import make_green_engine
from .search import (
    collision_scan,
    minimize_in_class,
    multistart_refine,
    saddle_refine,
    validate_splitting,
)
from .solver import continuation

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_SPLITTING = 2
EXIT_INTEGER_WEIGHT = 3
EXIT_NUMERICAL = 4

_DEFAULT_TOLERANCES = {"gradient": 1e-7, "newton": 1e-9, "quadrature": 1e-8}


@dataclass
class RunConfig:
    domain: geometry.DomainSpec
    singular_set: SingularSet
    n_points: int
    epsilon_list: list
    grid_n: int = 256
    green_grid_n: int = 256
    tolerances: dict = field(default_factory=lambda: dict(_DEFAULT_TOLERANCES))
    seed: int = 0
    jobs: int = 1
    solver_method: str = "split"
    n_starts: int = 1
    ball_radius: float | None = None
    xi_star: list | None = None
    collision_scan: dict | None = None
    green_eval: dict | None = None
    raw: dict = field(default_factory=dict)

    @staticmethod
    def from_json(obj: dict) -> "RunConfig":
        try:
            domain = geometry.DomainSpec.from_json(obj["domain"])
            Z = SingularSet.from_json(obj.get("singular_set", {"points": [], "weights": []}))
            Z.validate_in(domain)
            n_points = int(obj.get("n_points", 1))
            eps = [float(e) for e in obj.get("epsilon_list", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad configuration: {exc}") from exc
        if eps and any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ValueError("epsilon_list must be strictly decreasing")
        if any(e <= 0 for e in eps):
            raise ValueError("epsilon values must be positive")
        tol = dict(_DEFAULT_TOLERANCES)
        tol.update(obj.get("tolerances", {}))
        if any(v <= 0 for v in tol.values()):
            raise ValueError("tolerances must be positive")
        jobs = int(obj.get("jobs", 1))
        if jobs < 1:
            raise ValueError("jobs must be at least 1")
        return RunConfig(
            domain=domain,
            singular_set=Z,
            n_points=n_points,
            epsilon_list=eps,
            grid_n=int(obj.get("grid_n", 256)),
            green_grid_n=int(obj.get("green_grid_n", 256)),
            tolerances=tol,
            seed=int(obj.get("seed", 0)),
            jobs=jobs,
            solver_method=str(obj.get("solver_method", "split")),
            n_starts=int(obj.get("n_starts", 1)),
            ball_radius=obj.get("ball_radius"),
            xi_star=obj.get("xi_star"),
            collision_scan=obj.get("collision_scan"),
            green_eval=obj.get("green_eval"),
            raw=obj,
        )


# ---------------------------------------------------------------------------
# output helpers


def _schema(name: str) -> dict:
    with resources.files("multibubble.schemas").joinpath(name).open() as fh:
        return json.load(fh)


def write_json(path: Path, obj: dict, schema_name: str | None = None):
    if schema_name is not None:
        import jsonschema

        jsonschema.validate(obj, _schema(schema_name))
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, header: list, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _config_hash(obj: dict) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _write_manifest(outdir: Path, command: str, cfg: RunConfig, outputs: list):
    import scipy

    manifest = {
        "command": command,
        "config_sha256": _config_hash(cfg.raw),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "seed": cfg.seed,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "outputs": sorted(outputs),
        "config": cfg.raw,
    }
    write_json(outdir / "manifest.json", manifest, "manifest.schema.json")


# ---------------------------------------------------------------------------
# commands


def cmd_validate(cfg: RunConfig, outdir: Path, dry_run: bool, verbose: bool) -> int:
    plan = validate_splitting(cfg.n_points, cfg.singular_set, cfg.domain)
    if verbose or dry_run:
        print(f"plan: counts={plan.counts} delta={plan.delta:.6g}")
    if dry_run:
        _print_dry_run(cfg, plan)
        return EXIT_OK
    write_json(outdir / "plan.json", plan.to_json(), "splitting_plan.schema.json")
    _write_manifest(outdir, "validate", cfg, ["plan.json"])
    return EXIT_OK


def _find_critical(cfg: RunConfig, green):
    plan = validate_splitting(cfg.n_points, cfg.singular_set, cfg.domain)
    km = minimize_in_class(
        plan, cfg.singular_set, green, grad_tol=1e-8
    )
    report = saddle_refine(
        km.configuration,
        cfg.singular_set,
        green,
        grad_tol=cfg.tolerances["gradient"],
        hess_step=1e-4 * plan.delta,
    )
    extra = {}
    if cfg.n_starts > 1:
        multi = multistart_refine(
            plan,
            cfg.singular_set,
            green,
            seed=cfg.seed,
            n_starts=cfg.n_starts,
            grad_tol=cfg.tolerances["gradient"],
            jobs=cfg.jobs,
        )
        psis = [m.psi_value for m in multi]
        extra["multistart"] = {
            "n_starts": cfg.n_starts,
            "n_converged": sum(m.converged for m in multi),
            "psi_spread": max(psis) - min(psis),
            "psi_values": psis,
        }
    return plan, km, report, extra


def cmd_find_critical(cfg: RunConfig, outdir: Path, dry_run: bool, verbose: bool) -> int:
    green = make_green_engine(cfg.domain, grid_n=cfg.green_grid_n)
    if dry_run:
        plan = validate_splitting(cfg.n_points, cfg.singular_set, cfg.domain)
        _print_dry_run(cfg, plan)
        return EXIT_OK
    plan, km, report, extra = _find_critical(cfg, green)
    if verbose:
        print(
            f"critical point: psi={report.psi_value:.8g} grad={report.grad_norm:.3g} "
            f"signature={report.hessian_signature}"
        )
    obj = report.to_json()
    obj["class_minimum"] = {
        "psi_value": km.psi_value,
        "converged": km.converged,
        "iterations": km.iterations,
    }
    obj.update(extra)
    write_json(outdir / "plan.json", plan.to_json(), "splitting_plan.schema.json")
    write_json(outdir / "critical_point.json", obj, "critical_point.schema.json")
    write_csv(
        outdir / "descent_trace.csv",
        ["iteration", "psi", "projected_grad_norm"],
        [(i, float(p), float(g)) for (i, p, g) in km.trace],
    )
    _write_manifest(
        outdir, "find-critical", cfg, ["plan.json", "critical_point.json", "descent_trace.csv"]
    )
    return EXIT_OK


def cmd_solve(cfg: RunConfig, outdir: Path, dry_run: bool, verbose: bool) -> int:
    if not cfg.epsilon_list:
        raise ValueError("epsilon_list is required for solve")
    green = make_green_engine(cfg.domain, grid_n=cfg.green_grid_n)
    if dry_run:
        plan = validate_splitting(cfg.n_points, cfg.singular_set, cfg.domain)
        _print_dry_run(cfg, plan)
        return EXIT_OK
    outputs = []
    if cfg.xi_star is not None:
        xi_star = Configuration(np.asarray(cfg.xi_star, dtype=float))
        plan = validate_splitting(cfg.n_points, cfg.singular_set, cfg.domain)
        write_json(outdir / "plan.json", plan.to_json(), "splitting_plan.schema.json")
        outputs.append("plan.json")
    else:
        plan, km, cp_report, extra = _find_critical(cfg, green)
        xi_star = cp_report.xi_star
        obj = cp_report.to_json()
        obj.update(extra)
        write_json(outdir / "plan.json", plan.to_json(), "splitting_plan.schema.json")
        write_json(outdir / "critical_point.json", obj, "critical_point.schema.json")
        outputs += ["plan.json", "critical_point.json"]
    reports = continuation(
        green,
        cfg.singular_set,
        xi_star,
        cfg.epsilon_list,
        cfg.grid_n,
        method=cfg.solver_method,
        ball_radius=cfg.ball_radius,
        tol=cfg.tolerances["newton"],
    )
    for i, rep in enumerate(reports):
        name = f"solve_report_{i:02d}.json"
        write_json(outdir / name, rep.to_json(), "solve_report.schema.json")
        outputs.append(name)
        fname = f"field_{i:02d}.csv"
        pts = rep.grid.points
        write_csv(
            outdir / fname,
            ["x", "y", "v"],
            zip(map(float, pts[:, 0]), map(float, pts[:, 1]), map(float, rep.nodal_values)),
        )
        outputs.append(fname)
        if verbose:
            masses = ", ".join(f"{m:.5g}" for (_, _, m) in rep.ball_masses)
            print(
                f"eps={rep.epsilon:g}: iters={rep.newton_iters} masses=[{masses}] "
                f"farfield={rep.farfield_deviation:.4g}"
            )
    _write_manifest(outdir, "solve", cfg, outputs)
    return EXIT_OK


def cmd_collision_scan(cfg: RunConfig, outdir: Path, dry_run: bool, verbose: bool) -> int:
    params = cfg.collision_scan
    if not params:
        raise ValueError("config lacks a collision_scan block")
    green = make_green_engine(cfg.domain, grid_n=cfg.green_grid_n)
    p_index = int(params.get("p_index", 0))
    n_sides = int(params["n_sides"])
    rho_start = float(params.get("rho_start", 0.1))
    rho_factor = float(params.get("rho_factor", 0.5))
    n_rho = int(params.get("n_rho", 12))
    offset = params.get("center_offset", [0.0, 0.0])
    if dry_run:
        print(f"scan: {n_sides}-gon around source {p_index}, {n_rho} radii from {rho_start}")
        return EXIT_OK
    rhos = rho_start * rho_factor ** np.arange(n_rho)
    scan = collision_scan(
        green, cfg.singular_set, p_index, n_sides, rhos, center_offset=offset
    )
    if verbose:
        print(
            f"final slope {scan.final_slope:.6g}, predicted {scan.predicted_slope:.6g}"
        )
    write_csv(
        outdir / "collision_scan.csv",
        ["rho", "psi", "grad_norm", "slope_estimate"],
        [(float(r), float(p), float(gn), float(s)) for (r, p, gn, s) in scan.rows],
    )
    _write_manifest(outdir, "collision-scan", cfg, ["collision_scan.csv"])
    return EXIT_OK


def cmd_green_eval(cfg: RunConfig, outdir: Path, dry_run: bool, verbose: bool) -> int:
    params = cfg.green_eval
    if not params or "pairs" not in params:
        raise ValueError("config lacks a green_eval block with pairs")
    green = make_green_engine(cfg.domain, grid_n=cfg.green_grid_n)
    pairs = [(np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for a, b in params["pairs"]]
    if dry_run:
        print(f"green-eval: {len(pairs)} pairs on {cfg.domain.kind}")
        return EXIT_OK
    rows = []
    for x, y in pairs:
        gval = green.green(x, y)
        hval = green.robin_regular(x, y)
        grad = green.grad_x_green(x, y)
        rows.append(
            (
                float(x[0]), float(x[1]), float(y[0]), float(y[1]),
                float(gval), float(hval), float(grad[0]), float(grad[1]),
            )
        )
    write_csv(
        outdir / "green_eval.csv",
        ["x1", "x2", "y1", "y2", "green", "regular_part", "grad_g_x", "grad_g_y"],
        rows,
    )
    _write_manifest(outdir, "green-eval", cfg, ["green_eval.csv"])
    return EXIT_OK


def _print_dry_run(cfg: RunConfig, plan):
    m_est = int(0.8 * cfg.grid_n**2)
    lu_mb = 40 * m_est * 16 / 1e6
    print(f"domain: {cfg.domain.kind}, sources: {len(cfg.singular_set)}, N={cfg.n_points}")
    print(f"plan: counts={plan.counts} angles={ {k: round(v, 4) for k, v in plan.angles.items()} } delta={plan.delta:.6g}")
    print(f"solver grid: {cfg.grid_n}^2 (~{m_est} unknowns, ~{lu_mb:.0f} MB factored)")
    print(f"green grid: {cfg.green_grid_n}^2 (used for non-disk domains)")
    print(f"epsilons: {cfg.epsilon_list}; method: {cfg.solver_method}; seed: {cfg.seed}")


_COMMANDS = {
    "validate": cmd_validate,
    "find-critical": cmd_find_critical,
    "solve": cmd_solve,
    "collision-scan": cmd_collision_scan,
    "green-eval": cmd_green_eval,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="multibubble",
        description="locate multi-point concentration configurations and verify them by PDE solves",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (default: config value or ./runs)")
        p.add_argument("--dry-run", action="store_true", help="print the resolved plan and sizes, compute nothing")
        p.add_argument("-v", "--verbose", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0

    try:
        raw = json.loads(Path(args.config).read_text())
        cfg = RunConfig.from_json(raw)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    outdir = Path(args.out or cfg.raw.get("output_dir", "runs"))
    if not args.dry_run:
        try:
            outdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create output directory: {exc}", file=sys.stderr)
            return EXIT_USAGE

    try:
        return _COMMANDS[args.command](cfg, outdir, args.dry_run, args.verbose)
    except NoSplitting as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_NO_SPLITTING
    except IntegerWeightObstruction as exc:
        print(f"integer-weight obstruction: {exc}", file=sys.stderr)
        return EXIT_INTEGER_WEIGHT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MultibubbleError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
