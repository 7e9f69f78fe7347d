"""Command-line harness for the convergence tables, eigenvalues and simulations.

Exit codes: 0 success, 1 a tolerance verdict failed, 2 configuration error,
3 numerical failure.  The output directory is taken from ``--out``, then the
``DIVDIVCH_OUT`` environment variable, then the config file, then ``out``.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import benchmarks as bm
from .assembly import ConfigurationError, NumericalFailure

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("divdivch")

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "DIVDIVCH_OUT"
CONFIG_KEYS = {"domain", "levels", "eps", "tau", "tau_rule", "T", "postprocess", "out", "seed",
               "case", "stabilization", "structured", "dense_eigs", "snapshot_times"}
COMMANDS = ("table1", "table2", "table3", "table5", "table6", "coalesce", "infsup", "audit", "run")


def parse_levels(text) -> list[int]:
    """``"1..6"``, ``"2,3,5"`` or a list of ints."""
    if isinstance(text, (list, tuple)):
        out = [int(v) for v in text]
    else:
        text = str(text).strip()
        if ".." in text:
            a, b = text.split("..", 1)
            out = list(range(int(a), int(b) + 1))
        else:
            out = [int(v) for v in text.split(",") if v.strip()]
    if not out or any(v < 1 for v in out) or sorted(set(out)) != out:
        raise ConfigurationError(f"levels must be increasing positive integers, got {text!r}")
    return out


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"cli.load_config: no such config file {str(p)!r}")
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cli.load_config: {exc}") from exc
    bad = sorted(set(data) - CONFIG_KEYS)
    if bad:
        raise ConfigurationError(f"cli.load_config: unknown keys {bad}")
    return data


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divdivch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML file with run settings")
        s.add_argument("--levels", help="mesh levels, e.g. 1..6 or 2,3,4")
        s.add_argument("--eps", type=float)
        s.add_argument("--tau", type=float)
        s.add_argument("--tau-rule", dest="tau_rule", choices=("fixed", "h2", "h4"))
        s.add_argument("--T", type=float)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--dense-eigs", dest="dense_eigs", action="store_true", default=None)
        s.add_argument("--domain", choices=("square", "lshape"))
        s.add_argument("--case")
        s.add_argument("--postprocess", action="store_true", default=None)
        s.add_argument("--stabilization", type=float)
        s.add_argument("--structured", type=int)
        s.add_argument("--csv-snapshots", dest="csv_snapshots", action="store_true",
                       help="also write x,y,u snapshot CSVs")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _settings(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    for k in CONFIG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if "levels" in cfg:
        cfg["levels"] = parse_levels(cfg["levels"])
    out = args.out or os.environ.get(OUT_ENV) or cfg.get("out") or "out"
    cfg["out"] = Path(out)
    for k in ("eps", "tau", "T"):
        if k in cfg and not (isinstance(cfg[k], (int, float)) and cfg[k] > 0):
            raise ConfigurationError(f"{k} must be a positive number")
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _finish(verdicts: bm.VerdictSet) -> int:
    for line in verdicts.lines():
        print(line)
    return EXIT_OK if verdicts.passed else EXIT_VERDICT


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_table(name: str, cfg: dict) -> int:
    blocks = bm.TABLES[name]
    if "tau_rule" in cfg:
        blocks = tuple(b for b in blocks if b.tau_rule == cfg["tau_rule"]) or (
            replace(blocks[0], name=cfg["tau_rule"], tau_rule=cfg["tau_rule"]),)
    verdicts = bm.VerdictSet()
    for b in blocks:
        b = replace(b, T=cfg.get("T", b.T), tau=cfg.get("tau", b.tau),
                    postprocess=cfg.get("postprocess", b.postprocess),
                    levels=tuple(cfg.get("levels", b.levels)))
        if b.tau_rule == "fixed" and b.tau is None:
            raise ConfigurationError("the fixed rule needs --tau")
        t0 = time.time()
        rep = bm.run_block(name, b, cfg.get("eps", 1.0),
                           progress=lambda lev, res: log.info("level %d done", lev))
        csv = rep.to_csv()
        print(f"# {name} block {b.name}: tau rule {b.tau_rule}, T={b.T:g} ({time.time() - t0:.1f} s)")
        print(csv, end="")
        _write(cfg["out"] / f"{name}_{b.name}.csv", csv)
        bm.check_table(name, b, rep, verdicts)
    return _finish(verdicts)


def cmd_table5(cfg: dict) -> int:
    from .biharmonic import METHODS, table5
    from .verify import eoc

    levels = cfg.get("levels", list(bm.TABLE5_LEVELS))
    errs = table5(levels)
    lines = ["method,mesh,err_sigma,rate_sigma,err_u,rate_u"]
    for m in METHODS:
        rs = eoc([e["sigma"] for e in errs[m]])
        ru = eoc([e["u"] for e in errs[m]])
        for i, lev in enumerate(levels):
            f = lambda r: "-" if r is None else f"{r:.2f}"
            lines.append(f"{m},{lev},{errs[m][i]['sigma']:.2E},{f(rs[i])},{errs[m][i]['u']:.2E},{f(ru[i])}")
    csv = "\n".join(lines) + "\n"
    print(csv, end="")
    _write(cfg["out"] / "table5.csv", csv)
    return _finish(bm.check_table5(errs, levels))


def cmd_table6(cfg: dict) -> int:
    from .biharmonic import METHODS, table6

    levels = cfg.get("levels", list(bm.EIGEN_LEVELS))
    eigs = table6(levels, dense=cfg.get("dense_eigs"))
    lines = ["method,mesh,lambda1,lambda2,lambda3,lambda4,lambda5"]
    for m in METHODS:
        for lev, lam in zip(levels, eigs[m]):
            lines.append(f"{m},{lev}," + ",".join(f"{v:.4f}" for v in lam))
    csv = "\n".join(lines) + "\n"
    print(csv, end="")
    _write(cfg["out"] / "table6.csv", csv)
    return _finish(bm.check_table6(eigs, levels))


def coalescence(cfg: dict, out: Path | None = None, csv_snapshots: bool = False):
    """Run the two-drop trajectory; returns the run result and a verdict set."""
    from .ch_solver import RunConfig, run
    from .verify import count_zero_level_components, vertex_average

    base = dict(bm.COALESCENCE_RUN)
    for k in ("eps", "tau", "T", "structured", "stabilization"):
        if k in cfg:
            base[k] = cfg[k]
    if "snapshot_times" in cfg:
        base["snapshot_times"] = tuple(cfg["snapshot_times"])
    rc = RunConfig(domain="square", case="coalescence", out_dir=str(out) if out else None,
                   record_mass=out is not None, snapshot_csv=csv_snapshots, **base)
    res = run(rc)
    mesh = res.ops.mesh
    m = res.masses[:, 2]
    step_drift = float(np.abs(np.diff(m)).max())
    drift = float(np.abs(m - m[0]).max())
    c0 = count_zero_level_components(mesh, vertex_average(mesh, res.initial.w))
    c1 = count_zero_level_components(mesh, vertex_average(mesh, res.final.w))
    v = bm.VerdictSet()
    v.add("mass drift per step", step_drift <= 1e-10, f"max {step_drift:.2e} (<= 1e-10)")
    v.add("mass drift cumulative", drift <= 1e-8, f"max {drift:.2e} over {len(m) - 1} steps (<= 1e-8)")
    v.add("zero-level components", c0 == 2 and c1 == 1,
          f"{c0} at t=0, {c1} at t={res.final.time:g} (expected 2 then 1)", gated=False)
    return res, v


def cmd_coalesce(cfg: dict, csv_snapshots: bool) -> int:
    t0 = time.time()
    res, v = coalescence(cfg, cfg["out"], csv_snapshots)
    print(f"# coalescence: {res.config.n_steps} steps in {time.time() - t0:.1f} s, "
          f"snapshots {[str(p) for p in res.snapshots]}")
    return _finish(v)


def cmd_infsup(cfg: dict) -> int:
    from .assembly import build_operators
    from .mesh import build_mesh
    from .verify import numerical_infsup, numerical_infsup_sparse

    levels = cfg.get("levels", [1, 2, 3, 4])
    domain = cfg.get("domain", "square")
    betas = []
    for lev in levels:
        ops = build_operators(build_mesh(domain, lev))
        # dense up to level 4, shift-invert Lanczos beyond
        betas.append(numerical_infsup(ops) if lev <= 4 else numerical_infsup_sparse(ops))
    csv = "mesh,beta\n" + "".join(f"{lev},{b:.6e}\n" for lev, b in zip(levels, betas))
    print(csv, end="")
    _write(cfg["out"] / "infsup.csv", csv)
    var = (max(betas) - min(betas)) / max(betas)
    v = bm.VerdictSet()
    v.add("inf-sup", min(betas) > 0 and var < 0.25, f"min {min(betas):.4f}, variation {var:.1%} (< 25%)")
    return _finish(v)


def cmd_audit(cfg: dict) -> int:
    from .assembly import build_operators
    from .mesh import build_mesh
    from .verify import conformity_audit

    levels = cfg.get("levels", [2])
    seed = int(cfg.get("seed", 0))
    v = bm.VerdictSet()
    lines = ["mesh,sampling,max_violation"]
    for lev in levels:
        ops = build_operators(build_mesh(cfg.get("domain", "square"), lev))
        good = conformity_audit(ops, 20, seed, constrained=True)
        bad = conformity_audit(ops, 20, seed, constrained=False)
        lines += [f"{lev},constrained,{good['max_violation']:.3e}",
                  f"{lev},unconstrained,{bad['max_violation']:.3e}"]
        v.add(f"audit level {lev}", good["max_violation"] <= 1e-10 and bad["max_violation"] >= 1e-3,
              f"members {good['max_violation']:.1e} (<= 1e-10), control {bad['max_violation']:.1e} (>= 1e-3)")
    csv = "\n".join(lines) + "\n"
    print(csv, end="")
    _write(cfg["out"] / "audit.csv", csv)
    return _finish(v)


def cmd_run(cfg: dict) -> int:
    from .ch_solver import RunConfig, run, write_vtk
    from .verify import step_for

    domain = cfg.get("domain", "square")
    levels = cfg.get("levels", [1])
    case = cfg.get("case", domain)
    T = cfg.get("T", 2e-4)
    out = cfg["out"]
    rule = cfg.get("tau_rule", "fixed")
    for lev in levels:
        if cfg.get("structured"):
            h = math.sqrt(2.0) / cfg["structured"]
        else:
            from .mesh import build_mesh
            h = build_mesh(domain, lev).h
        dt = step_for(rule, h / math.sqrt(2.0), cfg.get("tau", 1e-5))
        N = max(1, int(round(T / dt)))
        rc = RunConfig(domain=domain, level=lev, eps=cfg.get("eps", 1.0), tau=T / N, T=T, case=case,
                       postprocess=bool(cfg.get("postprocess", False)),
                       structured=cfg.get("structured"), out_dir=str(out / f"level{lev}"),
                       stabilization=cfg.get("stabilization", 0.0))
        res = run(rc)
        write_vtk(out / f"level{lev}" / "final.vtk", res.ops, res.final)
        msg = f"level {lev}: {N} steps, mass {res.final.mass:.12e}"
        if res.errors:
            msg += ", " + ", ".join(f"{k} {v:.3e}" for k, v in res.errors.items())
        print(msg)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _settings(args)
        if args.command in bm.TABLES:
            return cmd_table(args.command, cfg)
        if args.command == "table5":
            return cmd_table5(cfg)
        if args.command == "table6":
            return cmd_table6(cfg)
        if args.command == "coalesce":
            return cmd_coalesce(cfg, args.csv_snapshots)
        if args.command == "infsup":
            return cmd_infsup(cfg)
        if args.command == "audit":
            return cmd_audit(cfg)
        return cmd_run(cfg)
    except (ConfigurationError, ValueError) as exc:
        print(f"configuration error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
