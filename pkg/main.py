"""
Command-line driver: sample, fit, trace and experiment subcommands.

Exit codes: 0 ok, 2 usage or malformed input, 3 scatter matrix not SPD,
4 fit did not converge (report still written), 5 degenerate data.
Every failure prints a single `error: ...` line on stderr.
"""
import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from data.configs import load_experiment_config
from data.sample_data import (TEXTURE_PARAMETERS, generate_sample_data, read_dataset, read_scatter,
                              scenario_params, texture_params, write_dataset)
from logic import __version__
from logic.errors import DegenerateData, MggdError, NotPositiveDefinite, NotSymmetric
from logic.estimator import DEFAULT_MAX_ITER, DEFAULT_TOL, FitOptions, InitKind, fit_joint
from logic.experiments import ExperimentConfig, ExperimentKind, run_convergence_trace, run_experiment
from utils.helpers import (build_report, create_summary_metrics, dumps_json, setup_logging,
                           validate_report, write_table)

logger = logging.getLogger("mggd")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BAD_MATRIX = 3
EXIT_NOT_CONVERGED = 4
EXIT_DEGENERATE = 5


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def add_scenario_arguments(parser):
    parser.add_argument("--p", type=int, help="dimension")
    parser.add_argument("--beta", type=float, help="shape parameter")
    parser.add_argument("--m", type=float, help="scale parameter")
    parser.add_argument("--seed", type=int, required=True, help="master seed")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--rho", type=float, help="Toeplitz scatter rho^|i-j|")
    source.add_argument("--scatter-file", type=Path, help="CSV file holding a p x p SPD scatter")
    source.add_argument("--texture", choices=sorted(TEXTURE_PARAMETERS), help="bundled texture parameter set")


def scenario_from_args(args):
    if args.texture is not None:
        params = texture_params(args.texture)
        if args.p is not None and args.p != params.dim:
            raise UsageError(f"--p {args.p} conflicts with texture dimension {params.dim}")
        beta = params.shape_beta if args.beta is None else args.beta
        m = params.scale_m if args.m is None else args.m
        return scenario_params(params.dim, beta, m, scatter=params.scatter)

    missing = [flag for flag, value in (("--p", args.p), ("--beta", args.beta), ("--m", args.m)) if value is None]
    if missing:
        raise UsageError(f"missing required flags: {', '.join(missing)}")
    if args.scatter_file is not None:
        return scenario_params(args.p, args.beta, args.m, scatter=read_scatter(args.scatter_file, args.p))
    return scenario_params(args.p, args.beta, args.m, rho=args.rho)


def cmd_sample(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    params = scenario_from_args(args)
    data = generate_sample_data(params, args.n, args.seed)
    write_dataset(data, args.out)
    effective = params.to_dict()
    effective.update({"n": args.n, "seed": args.seed, "out": str(args.out)})
    print(dumps_json(effective))
    return EXIT_OK


def parse_init(value):
    if value in ("identity", "scm"):
        return {"init": InitKind(value)}
    if value.startswith("file:"):
        return {"init": InitKind.USER, "init_matrix": read_scatter(Path(value[len("file:"):])).entries}
    raise UsageError(f"--init must be identity, scm or file:PATH, got {value!r}")


def cmd_fit(args):
    data = read_dataset(args.data)
    opts = FitOptions(tol_c=args.tol, max_iter=args.max_iter, beta_fixed=args.beta, **parse_init(args.init))

    started = time.perf_counter()
    report = fit_joint(data, opts)
    duration = time.perf_counter() - started

    doc = validate_report(build_report(report, opts, args.data, data.count, data.dim, duration, __version__))
    text = dumps_json(doc)
    if args.out is None:
        print(text)
    else:
        Path(args.out).write_text(text + "\n")
    if not report.converged:
        print(f"error: not converged after {report.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_trace(args):
    params = scenario_from_args(args)
    inits = [name.strip() for name in args.inits.split(",") if name.strip()]
    data = read_dataset(args.data) if args.data is not None else None
    n = data.count if data is not None else args.n
    cfg = ExperimentConfig(
        name="trace",
        kind=ExperimentKind.CONVERGENCE_TRACE,
        p=params.dim,
        beta_true=params.shape_beta,
        m_true=params.scale_m,
        n_grid=(n,),
        runs=1,
        master_seed=args.seed,
        init=FitOptions(tol_c=args.tol, max_iter=args.max_iter),
        scatter=params.scatter.entries.tolist(),
        trace_n=n,
        inits=inits,
    )
    trace = run_convergence_trace(cfg, data=data)
    write_table(trace.table, args.out if args.out is not None else sys.stdout)
    return EXIT_OK


def cmd_experiment(args):
    cfg = load_experiment_config(args.config)
    if args.workers is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    result = run_experiment(cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if result.metrics is not None:
        write_table(result.metrics, out_dir / "metrics.csv")
        print(create_summary_metrics(result.metrics))
    for name, table in result.traces.items():
        write_table(table, out_dir / f"{name}.csv")
        logger.info("wrote %s", out_dir / f"{name}.csv")
    return EXIT_OK


def build_parser():
    parser = CliParser(prog="mggd", description="Maximum-likelihood estimation for multivariate generalized Gaussians")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for iterations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    sample = commands.add_parser("sample", help="draw a synthetic dataset")
    add_scenario_arguments(sample)
    sample.add_argument("--n", type=int, required=True, help="number of observations")
    sample.add_argument("--out", type=Path, required=True, help="output CSV path")
    sample.set_defaults(handler=cmd_sample)

    fit = commands.add_parser("fit", help="fit (M, m, beta) to a dataset")
    fit.add_argument("--data", type=Path, required=True, help="dataset CSV")
    fit.add_argument("--beta", type=float, help="known shape parameter (skips shape estimation)")
    fit.add_argument("--tol", type=float, default=DEFAULT_TOL, help="stopping threshold on C(k)")
    fit.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    fit.add_argument("--init", default="scm", help="identity, scm or file:PATH")
    fit.add_argument("--out", type=Path, help="report path (stdout if omitted)")
    fit.set_defaults(handler=cmd_fit)

    trace = commands.add_parser("trace", help="convergence criteria per initialization")
    add_scenario_arguments(trace)
    trace.add_argument("--n", type=int, default=200)
    trace.add_argument("--data", type=Path, help="trace this dataset instead of sampling --n points")
    trace.add_argument("--inits", default="identity,scm,true", help="comma-separated: identity, scm, true, random")
    trace.add_argument("--tol", type=float, default=DEFAULT_TOL)
    trace.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    trace.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")
    trace.set_defaults(handler=cmd_trace)

    experiment = commands.add_parser("experiment", help="run a Monte Carlo experiment")
    experiment.add_argument("--config", required=True, help="config JSON path or preset:NAME")
    experiment.add_argument("--out-dir", type=Path, required=True)
    experiment.add_argument("--workers", type=int, help="process pool size (overrides the config)")
    experiment.set_defaults(handler=cmd_experiment)
    return parser


def fail(exc, code):
    message = " ".join(str(exc).split())
    print(f"error: {message}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.verbose)
        return args.handler(args)
    except UsageError as exc:
        return fail(exc, EXIT_USAGE)
    except (NotSymmetric, NotPositiveDefinite) as exc:
        return fail(exc, EXIT_BAD_MATRIX)
    except DegenerateData as exc:
        return fail(exc, EXIT_DEGENERATE)
    except (MggdError, ValueError, OSError) as exc:
        return fail(exc, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
