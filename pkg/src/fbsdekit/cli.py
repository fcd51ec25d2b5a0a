"""Experiment driver: single runs, N/M sweeps, and condition diagnostics.

``fbsde run`` executes one solver configuration against its reference
solution and emits one CSV record; ``fbsde sweep`` repeats that over a
list of N or M values reusing the same Brownian store (and appends the
fitted log-log rate of the total error for N sweeps); ``fbsde diagnose``
evaluates the convergence conditions for a constants file.

Configuration precedence is defaults < ``--config`` JSON file < flags.
Output floats use ``repr`` so identical runs produce byte-identical rows
(wall-clock milliseconds are the only varying column).  ``FBSDE_THREADS``
caps the linear-algebra thread pools; results do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

if "FBSDE_THREADS" in os.environ:  # must precede the numpy import chain
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(_var, os.environ["FBSDE_THREADS"])

from .brownian import PathBatch, make_time_grid, sample_fine_increments
from .diagnostics import (
    check_conditions,
    parse_constants,
    report_to_json,
    report_to_table,
)
from .errors import FBSDEError, InvalidArgument, NumericalFailure
from .problems import decoupled_test_problem, example1_problem, example2_problem
from .reference import compute_errors, fit_rate, simulate_reference
from .regression import RegressionConfig
from .solver import METHODS, SolverConfig, run_markovian_iteration

CSV_HEADER = "method,problem,N,M,paths,seed,fineN,err_x,err_y,err_z,total,wall_ms"

_PROBLEMS = ("example1", "example2", "brownian-linear", "constant")

_DEFAULTS = {
    "problem": "example1",
    "method": "differentiation",
    "N": 32,
    "M": 5,
    "paths": 15000,
    "seed": 7,
    "fine_n": 20480,
    "ridge": 1e-10,
    "inner_iters": 3,
    "f_mode": None,
    "fresh_noise": False,
    "out": None,
    "kappa_y": 0.1,
    "kappa_z": 0.1,
    "sigma_bar": 1.0,
    "rate": 1.0,
    "dim": 4,
    "horizon": 0.25,
    "x0": None,
}


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # invalid configuration exits with code 1
        raise _CliError(message)


def _add_run_flags(parser):
    parser.add_argument("--problem", choices=_PROBLEMS)
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--N", type=int)
    parser.add_argument("--M", type=int)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--fine-n", dest="fine_n", type=int)
    parser.add_argument("--ridge", type=float)
    parser.add_argument("--inner-iters", dest="inner_iters", type=int)
    parser.add_argument("--f-mode", dest="f_mode",
                        choices=("implicit-yz", "explicit-ynext"))
    parser.add_argument("--fresh-noise", dest="fresh_noise",
                        action="store_const", const=True)
    parser.add_argument("--out", help="append CSV rows to this file")
    parser.add_argument("--config", help="JSON file with defaults")
    parser.add_argument("--kappa-y", dest="kappa_y", type=float)
    parser.add_argument("--kappa-z", dest="kappa_z", type=float)
    parser.add_argument("--sigma-bar", dest="sigma_bar", type=float)
    parser.add_argument("--rate", type=float)
    parser.add_argument("--dim", type=int)
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--x0", type=float,
                        help="start point scalar (example1/example2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbsde", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one solver run against its reference")
    _add_run_flags(run)

    sweep = sub.add_parser("sweep", help="run over a list of N or M values")
    _add_run_flags(sweep)
    sweep.add_argument("--sweep", choices=("N", "M"), required=True)
    sweep.add_argument("--values", required=True,
                       help="comma-separated positive integers")

    diag = sub.add_parser("diagnose", help="evaluate convergence conditions")
    diag.add_argument("--constants", required=True,
                      help="key = value file with the assumption constants")
    diag.add_argument("--out", help="write the JSON report to this file")
    return parser


def _merge_options(args) -> dict:
    options = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as handle:
                loaded = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise _CliError(f"cannot read config {config_path}: {exc}")
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise _CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
        options.update(loaded)
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _build_problem(options):
    name = options["problem"]
    if name == "example1":
        kwargs = dict(
            kappa_y=options["kappa_y"],
            kappa_z=options["kappa_z"],
            sigma_bar=options["sigma_bar"],
            rate=options["rate"],
            dim=options["dim"],
            horizon=options["horizon"],
        )
        if options["x0"] is not None:
            kwargs["x0_scalar"] = options["x0"]
        return example1_problem(**kwargs)
    if name == "example2":
        kwargs = dict(horizon=options["horizon"])
        if options["x0"] is not None:
            kwargs["x0_scalar"] = options["x0"]
        return example2_problem(**kwargs)
    return decoupled_test_problem(name, horizon=options["horizon"])


def _solver_config(options, n, m) -> SolverConfig:
    regression = RegressionConfig(
        ridge=options["ridge"],
        inner_iters=options["inner_iters"],
        f_mode=options["f_mode"]
        if options["f_mode"] is not None
        else ("implicit-yz" if options["method"] == "differentiation"
              else "explicit-ynext"),
    )
    return SolverConfig(
        n_steps=n,
        num_iterations=m,
        num_paths=options["paths"],
        method=options["method"],
        seed=options["seed"],
        fine_n=options["fine_n"],
        fresh_noise=options["fresh_noise"],
        regression=regression,
    )


def _format_row(options, report, wall_ms) -> str:
    return ",".join(
        [
            report.method,
            options["problem"],
            str(report.n_steps),
            str(report.num_iterations),
            str(report.num_paths),
            str(report.seed),
            str(report.fine_n),
            repr(report.err_x),
            repr(report.err_y),
            repr(report.err_z),
            repr(report.total),
            str(int(wall_ms)),
        ]
    )


class _CsvSink:
    """Writes rows to stdout and optionally appends them to a file."""

    def __init__(self, path):
        self._path = path
        self._lines = [CSV_HEADER]
        print(CSV_HEADER)

    def emit(self, line):
        self._lines.append(line)
        print(line)

    def close(self):
        if self._path:
            fresh = not os.path.exists(self._path) or os.path.getsize(self._path) == 0
            with open(self._path, "a") as handle:
                lines = self._lines if fresh else self._lines[1:]
                for line in lines:
                    handle.write(line + "\n")


def _slice_reference(reference, stride):
    return PathBatch(
        x=reference.x[:, ::stride],
        y=reference.y[:, ::stride],
        z=reference.z[:, ::stride],
    )


def _execute(problem, options, n, m, store, reference):
    start = time.perf_counter()
    cfg = _solver_config(options, n, m)
    result = run_markovian_iteration(problem, cfg, store=store)
    grid = make_time_grid(problem.horizon, n)
    report = compute_errors(
        result.final_paths, reference, grid,
        n_steps=n, num_iterations=m, num_paths=cfg.num_paths,
        method=cfg.method, seed=cfg.seed, fine_n=cfg.fine_n,
    )
    wall_ms = (time.perf_counter() - start) * 1000.0
    return report, wall_ms


def cmd_run(args) -> int:
    options = _merge_options(args)
    problem = _build_problem(options)
    n, m = options["N"], options["M"]
    store = sample_fine_increments(
        options["seed"], options["paths"], options["fine_n"],
        problem.dim_w, problem.horizon,
    )
    reference = simulate_reference(
        problem, store, make_time_grid(problem.horizon, n)
    )
    report, wall_ms = _execute(problem, options, n, m, store, reference)
    sink = _CsvSink(options["out"])
    sink.emit(_format_row(options, report, wall_ms))
    sink.close()
    return 0


def cmd_sweep(args) -> int:
    options = _merge_options(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise _CliError(f"cannot parse --values {args.values!r}")
    if not values or any(v < 1 for v in values):
        raise _CliError("--values needs positive integers")
    problem = _build_problem(options)
    if args.sweep == "N":
        for v in values:
            if options["fine_n"] % v != 0:
                raise _CliError(f"N={v} does not divide fine_n={options['fine_n']}")
    store = sample_fine_increments(
        options["seed"], options["paths"], options["fine_n"],
        problem.dim_w, problem.horizon,
    )

    n_values = values if args.sweep == "N" else [options["N"]]
    n_max = max(n_values)
    references = {}
    if all(n_max % v == 0 for v in n_values):
        base = simulate_reference(
            problem, store, make_time_grid(problem.horizon, n_max)
        )
        for v in n_values:
            references[v] = _slice_reference(base, n_max // v)
    else:
        for v in sorted(n_values, reverse=True):
            references[v] = simulate_reference(
                problem, store, make_time_grid(problem.horizon, v)
            )

    sink = _CsvSink(options["out"])
    totals = []
    for v in values:
        n = v if args.sweep == "N" else options["N"]
        m = v if args.sweep == "M" else options["M"]
        report, wall_ms = _execute(problem, options, n, m, store, references[n])
        totals.append((v, report.total))
        sink.emit(_format_row(options, report, wall_ms))
    if args.sweep == "N" and len(totals) >= 2:
        sink.emit(f"# rate_total,{repr(fit_rate(totals))}")
    sink.close()
    return 0


def cmd_diagnose(args) -> int:
    try:
        with open(args.constants) as handle:
            text = handle.read()
    except OSError as exc:
        raise _CliError(f"cannot read constants file: {exc}")
    constants = parse_constants(text)
    report = check_conditions(constants)
    print(report_to_table(report))
    rendered = report_to_json(report)
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(rendered + "\n")
    else:
        print(rendered)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_diagnose(args)
    except (_CliError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        where = f" (iteration {exc.iteration}, step {exc.step})" if exc.step is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return 2
    except FBSDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
