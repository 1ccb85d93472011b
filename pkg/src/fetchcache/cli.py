"""Command-line front end.

Exit codes: 0 ok, 1 runtime failure, 2 config error, 3 fingerprint
mismatch, 4 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .configfile import RunConfig, load_config
from .experiments import SweepSpec, builtin_experiments, rows_to_csv, rows_to_jsonl, run_sweep
from .model import ConfigError, InvalidInputError
from .policies import POLICY_NAMES, compute_per_node_values, make_policy
from .sim import CSV_HEADER, compare, simulate
from .solver import ValueTable, value_iteration

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_FINGERPRINT, EXIT_NONCONVERGED = 0, 1, 2, 3, 4
THREADS_ENV = "FETCHCACHE_THREADS"


class FingerprintMismatch(Exception):
    pass


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def manifest_path(out: Path, directory: bool = False) -> Path:
    return out / "manifest.json" if directory else out.with_name(out.name + ".manifest.json")


def write_manifest(path: Path, args: argparse.Namespace, config: dict, seeds: dict,
                   artifacts: list[Path], started: float) -> Path:
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "seeds": seeds,
        "artifacts": [str(p) for p in artifacts],
        "version": __version__,
        "wall_clock_seconds": round(time.monotonic() - started, 6),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    atomic_write(path, json.dumps(manifest, indent=1) + "\n")
    return path


def _run_config(args) -> RunConfig:
    rc = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        rc = rc.with_seed(args.seed)
    solver = rc.solver
    overrides = {k: v for k, v in (("epsilon", getattr(args, "epsilon", None)),
                                   ("max_iterations", getattr(args, "max_iterations", None)),
                                   ("num_samples", getattr(args, "num_samples", None)))
                 if v is not None}
    sim_over = {k: v for k, v in (("horizon", getattr(args, "horizon", None)),
                                  ("num_trajectories", getattr(args, "trajectories", None)))
                if v is not None}
    return RunConfig(rc.model, replace(solver, **overrides), replace(rc.sim, **sim_over))


def _load_table(path, rc: RunConfig) -> ValueTable:
    table = ValueTable.load(path)
    expected = rc.model.fingerprint()
    if table.config_hash != expected:
        raise FingerprintMismatch(
            f"value table fingerprint {table.config_hash} does not match config {expected}")
    return table


def _policy(name: str, rc: RunConfig, table_path):
    table = per_node = None
    if name == "dp":
        if table_path is None:
            raise InvalidInputError("policy 'dp' needs --table")
        table = _load_table(table_path, rc)
    elif name == "separable":
        per_node = compute_per_node_values(rc.model, rc.solver)
    return make_policy(name, rc.model.gamma, table, per_node)


def cmd_solve(args) -> int:
    started = time.monotonic()
    rc = _run_config(args)
    table = value_iteration(rc.model, rc.solver)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".bin":
        tmp = out.with_name(f".{out.name}.tmp")
        tmp.write_bytes(table.to_bytes())
        os.replace(tmp, out)
    else:
        atomic_write(out, table.to_json() + "\n")
    write_manifest(manifest_path(out), args, rc.to_dict(), {"solver_seed": rc.solver.seed}, [out], started)
    summary = {"iterations": table.iterations, "residual": table.residual,
               "converged": table.converged, "config_hash": table.config_hash}
    print(json.dumps(summary) if args.format == "json" else
          f"iterations={table.iterations} residual={table.residual!r} converged={table.converged}")
    return EXIT_OK if table.converged else EXIT_NONCONVERGED


def _emit_reports(reports, args) -> str:
    if args.format == "csv":
        return CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports)
    if len(reports) == 1:
        return reports[0].to_json() + "\n"
    return json.dumps([r.to_dict() for r in reports], indent=1) + "\n"


def cmd_simulate(args) -> int:
    started = time.monotonic()
    rc = _run_config(args)
    policy = _policy(args.policy, rc, args.table)
    report = simulate(rc.model, policy, rc.sim)
    text = _emit_reports([report], args)
    out = Path(args.out)
    atomic_write(out, text)
    write_manifest(manifest_path(out), args, rc.to_dict(), {"solver_seed": rc.solver.seed, "sim_seed": rc.sim.seed},
                   [out], started)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    started = time.monotonic()
    rc = _run_config(args)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    if len(names) < 2:
        raise InvalidInputError("compare needs at least two policies")
    result = compare(rc.model, [_policy(n, rc, args.table) for n in names], rc.sim)
    if args.format == "csv":
        text = _emit_reports(list(result.reports.values()), args)
        text += "baseline,other,mean_difference,stderr\n" + "".join(
            f"{d.baseline},{d.other},{d.mean!r},{d.stderr!r}\n" for d in result.differences)
    else:
        text = json.dumps(result.to_dict(), indent=1) + "\n"
    out = Path(args.out)
    atomic_write(out, text)
    write_manifest(manifest_path(out), args, rc.to_dict(), {"solver_seed": rc.solver.seed, "sim_seed": rc.sim.seed},
                   [out], started)
    sys.stdout.write(text)
    return EXIT_OK


def _sweep_spec(arg: str) -> SweepSpec:
    builtins = builtin_experiments()
    if arg in builtins:
        return builtins[arg]
    path = Path(arg)
    if not path.exists():
        raise ConfigError("sweep", f"unknown builtin {arg!r}; valid names: {', '.join(builtins)}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("sweep", f"{path} is not valid JSON: {exc}") from None
    return SweepSpec.from_dict(data)


def cmd_sweep(args) -> int:
    started = time.monotonic()
    spec = _sweep_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, scenario=replace(spec.scenario, solver_seed=args.seed, sim_seed=args.seed))
    rows = run_sweep(spec, workers=args.threads)
    out = Path(args.out)
    csv_path, jsonl_path = out / f"{spec.name}.csv", out / f"{spec.name}.jsonl"
    atomic_write(csv_path, rows_to_csv(rows))
    atomic_write(jsonl_path, rows_to_jsonl(rows))
    write_manifest(manifest_path(out, directory=True), args, spec.to_dict(),
                   {"solver_seed": spec.scenario.solver_seed, "sim_seed": spec.scenario.sim_seed},
                   [csv_path, jsonl_path], started)
    flagged = sum(1 for r in rows if r["converged"] is False)
    print(f"{len(rows)} rows -> {csv_path}" + (f" ({flagged} unconverged)" if flagged else ""))
    return EXIT_OK


def cmd_validate(args) -> int:
    rc = _run_config(args)
    if args.table is not None:
        _load_table(args.table, rc)
    print(f"ok config_hash={rc.model.fingerprint()}")
    return EXIT_OK


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--threads", type=int, default=None,
                        help=f"worker cap (default: ${THREADS_ENV} or CPU count)")
    shared.add_argument("--format", choices=("csv", "json"), default="json")
    p = argparse.ArgumentParser(prog="fetchcache", description="Distributed fetch-or-cache DP solver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, solver=True, sim=False):
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        if solver:
            sp.add_argument("--epsilon", type=float)
            sp.add_argument("--max-iterations", type=int)
            sp.add_argument("--num-samples", type=int)
        if sim:
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--trajectories", type=int)

    sp = sub.add_parser(parents=[shared], name="solve", help="run value iteration and write the value table")
    common(sp)
    sp.add_argument("-o", "--out", required=True, help="output path (.json or .bin)")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser(parents=[shared], name="simulate", help="simulate one policy")
    common(sp, sim=True)
    sp.add_argument("--policy", choices=POLICY_NAMES, required=True)
    sp.add_argument("--table", help="value table for the dp policy")
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser(parents=[shared], name="compare", help="simulate several policies on common random numbers")
    common(sp, sim=True)
    sp.add_argument("--policies", required=True, help="comma separated policy names")
    sp.add_argument("--table")
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser(parents=[shared], name="sweep", help="run a builtin or JSON sweep spec")
    sp.add_argument("spec", help="builtin name or path to a JSON sweep spec")
    sp.add_argument("-o", "--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser(parents=[shared], name="validate", help="check a config (and optionally a table against it)")
    common(sp, solver=False)
    sp.add_argument("--table")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = _default_threads()
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
