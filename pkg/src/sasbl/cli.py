"""Command-line entry point.

Exit codes: 0 success, 1 input or validation error, 2 numeric
non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import io, srcloc, synth
from .engine import NumericBreakdownError, solve
from .model import Mode, PriorSupport, SensingProblem, SolverConfig, ValidationError

log = logging.getLogger("sasbl")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


def _parser():
    ap = argparse.ArgumentParser(prog="sasbl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="recover x from A and y")
    s.add_argument("--A", dest="A", required=True, help="measurement matrix CSV")
    s.add_argument("--y", dest="y", required=True, help="observation vector CSV")
    s.add_argument("--prior", help="prior support file (1-based indices)")
    s.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    s.add_argument("--epsilon", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--b-small", type=float)
    s.add_argument("--b-large", type=float)
    s.add_argument("--relative-tol", action="store_true")
    s.add_argument("--normalize-columns", action="store_true")
    s.add_argument("--out", required=True, help="result JSON path")

    for name, what in (("bench-synth", "synthetic recovery sweep"),
                       ("bench-srcloc", "source-localization sweep")):
        b = sub.add_parser(name, help=what)
        b.add_argument("--config", required=True)
        b.add_argument("--out", required=True, help="output CSV path")
        b.add_argument("--trials", type=int, help="override the trial count")
        b.add_argument("--jobs", type=int, default=1, help="worker processes")

    v = sub.add_parser("validate", help="check a bench config without running it")
    v.add_argument("--config", required=True)
    return ap


def _cmd_solve(args) -> int:
    A = io.read_matrix_csv(args.A)
    y = io.read_vector_csv(args.y)
    if y.shape[0] != A.shape[0]:
        raise ValidationError(f"y: length {y.shape[0]} does not match the {A.shape[0]} rows of A")
    prior = io.read_prior_support(args.prior, A.shape[1]) if args.prior else PriorSupport()
    overrides = {k: v for k, v in (("epsilon", args.epsilon), ("max_iter", args.max_iter),
                                   ("b_small", args.b_small), ("b_large", args.b_large))
                 if v is not None}
    config = SolverConfig(mode=args.mode, relative_tol=args.relative_tol,
                          normalize_columns=args.normalize_columns, **overrides)
    try:
        result = solve(SensingProblem(A, y), prior, config)
    except NumericBreakdownError as exc:
        log.error("numeric breakdown: %s", exc)
        if exc.partial is not None:
            io.write_solve_result(args.out, exc.partial, config)
        return EXIT_NONCONVERGED
    io.write_solve_result(args.out, result, config)
    log.info("%d iterations, converged=%s", result.iterations, result.converged)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _trials(cfg, args):
    if args.trials is not None:
        if args.trials < 1:
            raise io.ConfigError(["trials: must be at least 1"])
        cfg["trials"] = args.trials
    return cfg["trials"]


def _cmd_bench_synth(args) -> int:
    cfg = io.load_config(args.config, "synth")
    trials = _trials(cfg, args)
    solver = io.solver_from_config(cfg, synth.BENCH_SOLVER)
    base = synth.SynthSpec(n=cfg["n"], K=cfg["K"], m=cfg["m"], size_S=cfg["size_S"],
                           size_E=cfg["size_E"], snr_db=cfg.get("snr_db"), seed=cfg["seed"])
    result = synth.run_sweep(base, cfg["axis"], cfg["grid"], cfg["modes"], trials,
                             parallelism=args.jobs, solver=solver)
    io.write_sweep(args.out, result, cfg, solver, "synth")
    return EXIT_OK


def _cmd_bench_srcloc(args) -> int:
    cfg = io.load_config(args.config, "srcloc")
    trials = _trials(cfg, args)
    solver = io.solver_from_config(cfg, synth.BENCH_SOLVER)
    result = srcloc.run_srcloc_experiment(
        srcloc.GridField(cfg["rows"], cfg["cols"]), cfg["K"], cfg["K1"], cfg["m_grid"],
        cfg.get("snr_db"), trials, cfg["seed"], cfg["modes"], parallelism=args.jobs,
        solver=solver)
    io.write_sweep(args.out, result, cfg, solver, "srcloc")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = io.load_config(args.config)
    print(f"ok: {io.config_kind(cfg)} config, seed {cfg['seed']}, {cfg['trials']} trials")
    return EXIT_OK


COMMANDS = {"solve": _cmd_solve, "bench-synth": _cmd_bench_synth,
            "bench-srcloc": _cmd_bench_srcloc, "validate": _cmd_validate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
