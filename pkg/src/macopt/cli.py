"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 infeasible targets,
4 non-convergence.
"""

import argparse
import json
import sys
import time

import numpy as np

from . import harness
from .channel import generate, load_trace, save_trace, scale_to_snr
from .errors import (
    ConfigError,
    ConvergenceError,
    CorruptionError,
    DomainError,
    EmptyResultError,
    InfeasibleError,
    ParseError,
)
from .scenario import Scenario, read_config

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_CONVERGENCE = 0, 2, 3, 4


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file of 'key = value' lines")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--trials", type=_positive, help="number of channel realizations")
    common.add_argument("--out", help="output path (default: stdout where applicable)")
    common.add_argument("--threads", type=_positive, default=1, help="worker processes")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress run headers on stderr")

    p = argparse.ArgumentParser(prog="macopt", description="Minimum-energy uplink multiple-access allocation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-channel", parents=[common], help="draw a channel trace")
    g.add_argument("--fading", choices=("rayleigh", "rician"), default="rayleigh")
    g.add_argument("--k-db", type=float, help="Rician K-factor in dB")
    g.add_argument("--raw", action="store_true", help="keep path-loss scale instead of scaling to snr_db")

    s = sub.add_parser("solve", parents=[common], help="solve every trial with one scheme")
    s.add_argument("--scheme", choices=harness.SCHEMES, default="minpmac")
    s.add_argument("--mode", choices=harness.MODES, default="energy")
    s.add_argument("--channel", help="trace file (default: generate from the config)")
    s.add_argument("--dump-solution", metavar="PATH", help="write full minpmac solutions to PATH")
    s.add_argument("--timing", action="store_true", help="record wall_ms")

    t = sub.add_parser("train-drl", parents=[common], help="train the PPO allocator")
    t.add_argument("--updates", type=int, help="maximum PPO updates")
    t.add_argument("--curve", help="write the training curve (one value per line)")

    e = sub.add_parser("eval-drl", parents=[common], help="evaluate a trained policy against minpmac")
    e.add_argument("--policy", required=True, help="checkpoint written by train-drl")
    e.add_argument("--no-compare", action="store_true", help="skip the minpmac reference")

    x = sub.add_parser("experiment", parents=[common], help="run a sweep preset and emit CSV")
    x.add_argument("preset", choices=harness.PRESETS)
    x.add_argument("--svg", help="also write a chart to this path")
    x.add_argument("--timing", action="store_true", help="record wall_ms")

    pl = sub.add_parser("plot", parents=[common], help="render an experiment CSV as SVG")
    pl.add_argument("csv", help="CSV written by 'experiment'")
    pl.add_argument("--title", default="")
    return p


def load_scenario(args):
    scenario = read_config(args.config) if args.config else Scenario()
    if args.seed is not None:
        scenario = scenario.with_(seed=args.seed)
    return scenario


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line, file=sys.stderr)


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _trace(args, scenario, default_trials):
    trials = args.trials or default_trials
    return scale_to_snr(generate(scenario, trials), scenario, scenario.snr_db)


def cmd_gen_channel(args):
    scenario = load_scenario(args)
    trace = generate(scenario, args.trials or 100, fading=args.fading, k_db=args.k_db)
    if not args.raw:
        trace = scale_to_snr(trace, scenario, scenario.snr_db)
    if not args.out:
        raise ConfigError("gen-channel needs --out")
    save_trace(trace, args.out)
    U, L, N, T = trace.dims
    _say(args, f"wrote {T} trials (U={U} L={L} N={N}) to {args.out}")
    return EXIT_OK


def cmd_solve(args):
    scenario = load_scenario(args)
    trace = load_trace(args.channel) if args.channel else _trace(args, scenario, 1)
    U, L, N, T = trace.dims
    if (U, L, N) != (scenario.num_users, scenario.num_ap_antennas, scenario.num_subcarriers):
        raise ConfigError(f"trace dimensions U={U} L={L} N={N} do not match the scenario")
    spec = harness.SolverSpec(args.scheme, args.mode)
    if args.dump_solution and spec.label != "minpmac/energy":
        raise ConfigError("--dump-solution needs --scheme minpmac in energy mode")
    _say(args, f"scheme {spec.label}, U={U} L={L} N={N}, {T} trials, seed {scenario.seed}")
    if spec.label == "minpmac/energy":
        rows = _solve_minpmac(args, scenario, trace, spec)
    else:
        rows = harness.run_spec(spec, trace, scenario, threads=args.threads, timing=args.timing)
    _emit(harness.to_csv(harness.ExperimentResult(rows)), args.out)
    good = [r for r in rows if r.converged]
    for m in harness.METRICS if good else ():
        st = harness.aggregate([getattr(r, m) for r in good])
        _say(args, f"{m}: mean {st['mean']:.6g} std {st['std']:.3g} 95% CI [{st['ci_low']:.6g}, {st['ci_high']:.6g}]")
    failed = [r.trial for r in rows if not r.converged]
    if failed and spec.mode == "energy" and spec.scheme != "minpmac":
        _say(args, f"targets missed on trials {failed}")
        return EXIT_INFEASIBLE
    if failed:
        _say(args, f"not converged on trials {failed}")
        return EXIT_CONVERGENCE
    return EXIT_OK


def _solve_minpmac(args, scenario, trace, spec):
    """Direct solves, so infeasibility raises and the dump sees every trial."""
    from .minpmac import dump_solution, min_pmac

    point = harness.default_point(scenario)
    keys, results = [], []
    dump = open(args.dump_solution, "w") if args.dump_solution else None
    try:
        for t in range(trace.trials):
            t0 = time.perf_counter()
            sol = min_pmac(scenario, trace.trial(t))
            wall = (time.perf_counter() - t0) * 1e3 if args.timing else 0.0
            if dump is not None:
                dump.write(f"# trial {t}\n")
                dump_solution(sol, dump)
            if sol.power_cap_violations:
                _say(args, f"trial {t}: power cap exceeded by users {sol.power_cap_violations}")
            keys.append((spec, t, scenario, point))
            results.append((sol.sum_rate, sol.total_energy, sol.converged, sol.iterations, wall))
    finally:
        if dump is not None:
            dump.close()
    return harness.make_rows(keys, results)


def cmd_train(args):
    from .drl import save_policy, train

    scenario = load_scenario(args)
    trace = _trace(args, scenario, 16)
    if not args.out:
        raise ConfigError("train-drl needs --out for the policy checkpoint")
    _say(args, f"training on {trace.trials} trials, seed {scenario.seed}")
    policy, curve = train(scenario, trace, seed=scenario.seed, updates=args.updates)
    save_policy(policy, args.out)
    c = np.asarray(curve)
    k = max(1, c.size // 10)
    _say(args, f"{c.size} updates; mean episode reward first 10% {c[:k].mean():.6g}, last 10% {c[-k:].mean():.6g}")
    if args.curve:
        _emit("".join(f"{v!r}\n" for v in curve), args.curve)
    return EXIT_OK


def cmd_eval(args):
    from .drl import evaluate, load_policy

    scenario = load_scenario(args)
    policy = load_policy(args.policy)
    # Evaluation channels come from a stream distinct from the default training one.
    trace = _trace(args, scenario.with_(seed=(scenario.seed + 1) % 2**64), 8)
    stats = evaluate(policy, scenario, trace, compare=not args.no_compare)
    _emit(json.dumps(stats, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_experiment(args):
    from .svg import write_svg

    scenario = load_scenario(args)
    trials = args.trials or 100
    _say(args, *harness.preset_header(args.preset, scenario), f"{trials} trials per point")
    result = harness.run_preset(args.preset, scenario, trials=trials, threads=args.threads, timing=args.timing)
    _emit(harness.to_csv(result), args.out)
    if args.svg:
        write_svg(result, args.svg, args.preset)
    failed = sum(not r.converged for r in result.rows)
    if failed:
        _say(args, f"{failed} of {len(result)} rows did not converge (excluded from aggregates)")
    return EXIT_OK


def cmd_plot(args):
    from .svg import to_svg

    result = harness.read_csv(args.csv)
    _emit(to_svg(result, args.title), args.out)
    return EXIT_OK


COMMANDS = {
    "gen-channel": cmd_gen_channel,
    "solve": cmd_solve,
    "train-drl": cmd_train,
    "eval-drl": cmd_eval,
    "experiment": cmd_experiment,
    "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, DomainError, CorruptionError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConvergenceError, EmptyResultError) as err:
        print(f"not converged: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
