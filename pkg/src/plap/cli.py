"""Batch front door: run configured experiments, tabulate exact solutions,
solve single problems, and compute norms of dumped fields.

Exit codes: 0 all experiments passed, 1 at least one failed or errored,
2 configuration/usage error.  CSV bodies are deterministic for a fixed config
and seed; timestamps appear only in artifact file names.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .elliptic import SolverOptions, solve_dirichlet, solve_obstacle
from .exact import barenblatt, barenblatt_normalize, fundamental_solution
from .grids import (
    Box,
    Grid,
    GridFunction,
    PParams,
    SpaceTimeFunction,
    SpaceTimeGrid,
    dump_field,
    dump_spacetime,
    load_field,
    lr_norm,
    w1q_norm,
)
from .measures import DiscreteMeasure
from .parabolic import solve_cauchy_dirichlet, solve_parabolic_obstacle
from .pipeline import (
    ExperimentReport,
    barenblatt_compactness_experiment,
    dirac_rate_experiment,
    integrability_experiment,
)

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _pparams(raw) -> PParams:
    p = float(raw)
    _require(p > 2.0, f"p must be > 2 (the singular range p <= 2 is unsupported), got {p}")
    return PParams(p)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}")
    _require(isinstance(cfg, dict), "config must be a mapping")
    return cfg


_EXPERIMENT_KINDS = ("rate", "integrability", "compactness")


def _validate_experiment(i: int, exp) -> dict:
    _require(isinstance(exp, dict), f"experiment {i} must be a mapping")
    kind = exp.get("kind")
    _require(kind in _EXPERIMENT_KINDS, f"experiment {i}: unknown kind {kind!r} (expected one of {_EXPERIMENT_KINDS})")
    _require("p" in exp, f"experiment {i}: missing p")
    _pparams(exp["p"])
    n = int(exp.get("n", 2))
    _require(n in (1, 2, 3), f"experiment {i}: n must be 1, 2 or 3")
    if kind == "integrability":
        _require(exp.get("variant") in ("elliptic", "parabolic"), f"experiment {i}: integrability needs variant elliptic|parabolic")
        _require(isinstance(exp.get("q_list"), list) and len(exp["q_list"]) >= 2, f"experiment {i}: integrability needs a q_list")
    return exp


def _run_experiment(exp: dict, seed: int) -> ExperimentReport:
    kind = exp["kind"]
    P = _pparams(exp["p"])
    n = int(exp.get("n", 2))
    if kind == "rate":
        rep = dirac_rate_experiment(
            n,
            P,
            cells=int(exp.get("cells", 257)),
            sub_half_width=float(exp.get("sub_half_width", 0.5)),
            eps0=float(exp.get("eps0", 0.32)),
            levels=int(exp.get("levels", 5)),
        )
    elif kind == "integrability":
        rep = integrability_experiment(
            exp["variant"],
            n,
            P,
            [float(q) for q in exp["q_list"]],
            levels=int(exp.get("levels", 5)),
            base_cells=int(exp.get("base_cells", 16 if exp["variant"] == "elliptic" else 32)),
            base_steps=int(exp.get("base_steps", 8)),
        )
    else:
        rep = barenblatt_compactness_experiment(
            P,
            members=int(exp.get("members", 10)),
            M=float(exp.get("M", 2.0)),
            cells=int(exp.get("cells", 97)),
            steps=int(exp.get("steps", 48)),
        )
    rep.parameters["seed"] = seed
    if "name" in exp:
        rep.name = str(exp["name"])
    return rep


def _csv_body(table: list[dict]) -> str:
    if not table:
        return ""
    cols = list(table[0].keys())
    lines = [",".join(cols)]
    for row in table:
        lines.append(",".join(_csv_cell(row.get(c)) for c in cols))
    return "\n".join(lines) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_artifacts(rep: ExperimentReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%dT%H%M%S")
    n = rep.parameters.get("n", "x")
    p = rep.parameters.get("p", "x")
    base = f"{rep.name}-{n}-{p}-{stamp}"
    (out_dir / f"{base}.csv").write_text(_csv_body(rep.table))
    payload = {
        "name": rep.name,
        "parameters": rep.parameters,
        "fitted": rep.fitted,
        "passed": rep.passed,
        "notes": rep.notes,
    }
    (out_dir / f"{base}.json").write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    seed = int(cfg.get("seed", args.seed))
    experiments = cfg.get("experiments", [])
    _require(isinstance(experiments, list), "experiments must be a list")
    for i, exp in enumerate(experiments):
        _validate_experiment(i, exp)
    out_dir = Path(args.out_dir)
    if not experiments:
        print("no experiments configured; nothing to do")
        return 0
    reports: list[ExperimentReport | Exception] = [None] * len(experiments)

    def job(i):
        try:
            return _run_experiment(experiments[i], seed)
        except Exception as exc:  # experiment failure, not config failure
            return exc

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            reports = list(pool.map(job, range(len(experiments))))
    else:
        reports = [job(i) for i in range(len(experiments))]
    all_ok = True
    for i, rep in enumerate(reports):
        if isinstance(rep, Exception):
            all_ok = False
            print(f"[FAIL] experiment {i}: {rep}", file=sys.stderr)
            continue
        _write_artifacts(rep, out_dir)
        status = "PASS" if rep.passed else "FAIL"
        if not rep.passed:
            all_ok = False
        print(f"[{status}] {rep.name} {rep.parameters}")
        if args.verbose:
            print(json.dumps(rep.fitted, indent=2, default=_json_default))
    return 0 if all_ok else 1


def _grid_from_args(args) -> Grid:
    ext = args.extent
    _require(ext is not None and len(ext) % 2 == 0 and len(ext) >= 2, "--extent needs pairs: a0 b0 [a1 b1 ...]")
    extent = [(ext[2 * k], ext[2 * k + 1]) for k in range(len(ext) // 2)]
    cells = args.cells
    _require(cells is not None and len(cells) in (1, len(extent)), "--cells count must match --extent pairs")
    if len(cells) == 1:
        cells = cells * len(extent)
    return Grid(extent, cells)


def _cmd_tabulate(args) -> int:
    grid = _grid_from_args(args)
    P = _pparams(args.p)
    n = grid.dim
    coords = np.stack(grid.coords(), axis=-1)
    if args.solution == "fundamental":
        try:
            vals = fundamental_solution(coords, n, P)
        except ValueError as exc:
            raise ConfigError(str(exc))
    else:
        c = args.c if args.c is not None else barenblatt_normalize(n, P)
        vals = barenblatt(coords, args.t, n, P, c)
    dump_field(GridFunction(grid, np.asarray(vals)), args.out)
    print(f"wrote {args.out}")
    return 0


def _data_from_cfg(grid: Grid, section) -> DiscreteMeasure | None:
    if section is None:
        return None
    kind = section.get("type")
    if kind == "dirac":
        return DiscreteMeasure.dirac(grid, section.get("point", [0.0] * grid.dim), float(section.get("mass", 1.0)))
    if kind == "constant":
        dens = float(section.get("value", 1.0))
        _require(dens >= 0.0, "constant data density must be nonnegative")
        return DiscreteMeasure(grid, dens * grid.node_weights())
    raise ConfigError(f"unknown data type {kind!r} (expected dirac|constant)")


def _field_from_cfg(grid: Grid, section, default: float = 0.0) -> GridFunction:
    if section is None:
        return grid.full(default)
    kind = section.get("type", "constant")
    if kind == "constant":
        return grid.full(float(section.get("value", default)))
    if kind == "paraboloid":
        height = float(section.get("height", 0.5))
        width = float(section.get("width", 1.0))
        coords = grid.coords()
        r2 = sum(c**2 for c in coords)
        return GridFunction(grid, height - r2 / width**2)
    raise ConfigError(f"unknown field type {kind!r} (expected constant|paraboloid)")


def _problem_grid(cfg) -> Grid:
    gcfg = cfg.get("grid")
    _require(isinstance(gcfg, dict), "missing grid section")
    extent = gcfg.get("extent")
    cells = gcfg.get("cells")
    _require(extent is not None and cells is not None, "grid needs extent and cells")
    extent = [tuple(map(float, e)) for e in extent]
    cells = [int(c) for c in np.atleast_1d(cells)]
    if len(cells) == 1:
        cells = cells * len(extent)
    return Grid(extent, cells)


def _cmd_solve_elliptic(args) -> int:
    cfg = _load_config(args.config)
    grid = _problem_grid(cfg)
    P = _pparams(cfg.get("p", 3.0))
    f = _data_from_cfg(grid, cfg.get("data"))
    g = _field_from_cfg(grid, cfg.get("boundary"))
    u = solve_dirichlet(grid, P, f, g, SolverOptions(), scheme=cfg.get("scheme", "simplex"))
    out = Path(args.out_dir) / cfg.get("out", "elliptic.field")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_field(u, out)
    print(f"wrote {out}")
    return 0


def _cmd_obstacle(args) -> int:
    cfg = _load_config(args.config)
    grid = _problem_grid(cfg)
    P = _pparams(cfg.get("p", 3.0))
    psi = _field_from_cfg(grid, cfg.get("obstacle"), default=-1.0)
    g = _field_from_cfg(grid, cfg.get("boundary"))
    u = solve_obstacle(grid, P, psi, g, SolverOptions(), scheme=cfg.get("scheme", "simplex"))
    out = Path(args.out_dir) / cfg.get("out", "obstacle.field")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_field(u, out)
    print(f"wrote {out}")
    return 0


def _cmd_solve_parabolic(args) -> int:
    cfg = _load_config(args.config)
    grid = _problem_grid(cfg)
    P = _pparams(cfg.get("p", 3.0))
    tcfg = cfg.get("time", {})
    stg = SpaceTimeGrid(grid, float(tcfg.get("t0", 0.0)), float(tcfg.get("t1", 1.0)), int(tcfg.get("steps", 16)))
    pb = SpaceTimeFunction(stg, [_field_from_cfg(grid, cfg.get("boundary"))] * (stg.steps + 1))
    f = None
    if "data" in cfg and cfg["data"] is not None:
        base = _data_from_cfg(grid, cfg["data"])
        f = [base for _ in range(stg.steps)]
    if "obstacle" in cfg and cfg["obstacle"] is not None:
        psi = SpaceTimeFunction(stg, [_field_from_cfg(grid, cfg["obstacle"], default=-1.0)] * (stg.steps + 1))
        U = solve_parabolic_obstacle(stg, P, psi, pb, SolverOptions(), scheme=cfg.get("scheme", "simplex"))
    else:
        U = solve_cauchy_dirichlet(stg, P, f, pb, SolverOptions(), scheme=cfg.get("scheme", "simplex"))
    paths = dump_spacetime(U, args.out_dir, cfg.get("out", "parabolic"))
    print(f"wrote {len(paths)} slices under {args.out_dir}")
    return 0


def _cmd_norms(args) -> int:
    f = load_field(args.field)
    sub = None
    if args.sub:
        _require(len(args.sub) == 2 * f.grid.dim, "--sub needs lo/hi per axis")
        sub = Box(tuple(args.sub[: f.grid.dim]), tuple(args.sub[f.grid.dim :]))
    r = args.r
    print(f"lr_norm(r={r}): {lr_norm(f, r, sub)!r}")
    print(f"w1q_norm(q={r}): {w1q_norm(f, r, sub)!r}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plap", description=__doc__)
    parser.add_argument("--out-dir", default="out", help="artifact directory")
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed")
    parser.add_argument("--threads", type=int, default=1, help="experiment worker pool size")
    parser.add_argument("--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="run the experiments listed in a config file")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(fn=_cmd_run)

    p_tab = subs.add_parser("tabulate", help="sample an exact solution onto a grid file")
    p_tab.add_argument("solution", choices=["fundamental", "barenblatt"])
    p_tab.add_argument("--extent", type=float, nargs="+", required=True)
    p_tab.add_argument("--cells", type=int, nargs="+", required=True)
    p_tab.add_argument("--p", type=float, required=True)
    p_tab.add_argument("--t", type=float, default=1.0)
    p_tab.add_argument("--c", type=float, default=None)
    p_tab.add_argument("--out", required=True)
    p_tab.set_defaults(fn=_cmd_tabulate)

    p_se = subs.add_parser("solve-elliptic", help="solve a Dirichlet problem from a config")
    p_se.add_argument("--config", required=True)
    p_se.set_defaults(fn=_cmd_solve_elliptic)

    p_sp = subs.add_parser("solve-parabolic", help="march a Cauchy-Dirichlet problem from a config")
    p_sp.add_argument("--config", required=True)
    p_sp.set_defaults(fn=_cmd_solve_parabolic)

    p_ob = subs.add_parser("obstacle", help="solve an elliptic obstacle problem from a config")
    p_ob.add_argument("--config", required=True)
    p_ob.set_defaults(fn=_cmd_obstacle)

    p_no = subs.add_parser("norms", help="norms of a dumped field")
    p_no.add_argument("--field", required=True)
    p_no.add_argument("--r", type=float, default=2.0)
    p_no.add_argument("--sub", type=float, nargs="+", default=None)
    p_no.set_defaults(fn=_cmd_norms)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
