"""Command-line front end: ``generate``, ``run`` and ``eval``.

Exit codes are 0 on success, 1 on usage errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import statistics
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .data import HELDOUT_PROTOCOL, generate_cambridge, heldout_joint_loglik, load_dataset, save_dataset
from .engine import EVAL_STREAM, EngineConfig, HybridEngine
from .model import HyperParams
from .samplers import CollapsedSampler, UncollapsedSampler
from .trace import TraceFormatError, TraceRecord, TraceWriter, read_trace

log = logging.getLogger("hybrid_ibp")

EXIT_USAGE = 1
EXIT_RUNTIME = 2
ALGORITHMS = ("hybrid", "collapsed", "uncollapsed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    defaults = HyperParams()
    parser = _Parser(prog="hybrid-ibp",
                     description="Hybrid parallel Gibbs sampling for the linear-Gaussian IBP.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic Cambridge dataset")
    gen.add_argument("--rows", type=_positive_int, default=1000, help="number of rows (default: 1000)")
    gen.add_argument("--noise", type=_nonneg_float, default=0.5,
                     help="noise standard deviation (default: 0.5)")
    gen.add_argument("--feature-prob", type=_probability, default=0.5,
                     help="per-feature activation probability (default: 0.5)")
    gen.add_argument("--seed", type=int, default=None,
                     help="random seed (default: $IBP_SEED, else 0)")
    gen.add_argument("--out", type=Path, required=True,
                     help="dataset CSV path; metadata goes next to it")

    run = sub.add_parser("run", help="run a sampler and write a trace")
    run.add_argument("--config", type=Path, default=None,
                     help="key=value file setting any run option; flags win on conflict")
    run.add_argument("--algo", choices=ALGORITHMS, default="hybrid", help="sampler (default: hybrid)")
    run.add_argument("--procs", type=_positive_int, default=1,
                     help="worker count P, hybrid only (default: 1)")
    run.add_argument("--iters", type=_nonneg_int, default=1000,
                     help="global iterations (default: 1000)")
    run.add_argument("--subiters", type=_nonneg_int, default=5,
                     help="sub-iterations L per global step (default: 5)")
    run.add_argument("--seed", type=int, default=None,
                     help="random seed (default: $IBP_SEED, else 0)")
    run.add_argument("--data", type=Path, default=None, help="dataset CSV from 'generate'")
    run.add_argument("--trace", type=Path, default=None, help="output trace CSV")
    run.add_argument("--scheduler", choices=("serial", "process"), default="process",
                     help="hybrid worker scheduler (default: process)")
    run.add_argument("--alpha", type=_positive_float, default=defaults.alpha,
                     help=f"initial IBP concentration (default: {defaults.alpha})")
    run.add_argument("--sigma-x", type=_positive_float, default=defaults.sigma_x,
                     help=f"initial noise std (default: {defaults.sigma_x})")
    run.add_argument("--sigma-a", type=_positive_float, default=defaults.sigma_a,
                     help=f"initial loading std (default: {defaults.sigma_a})")
    run.add_argument("--alpha-shape", type=_positive_float, default=defaults.alpha_prior[0],
                     help=f"Gamma prior shape on alpha (default: {defaults.alpha_prior[0]})")
    run.add_argument("--alpha-rate", type=_positive_float, default=defaults.alpha_prior[1],
                     help=f"Gamma prior rate on alpha (default: {defaults.alpha_prior[1]})")
    run.add_argument("--variance-step", type=_positive_float, default=defaults.variance_step,
                     help=f"random-walk step on log sigma (default: {defaults.variance_step})")
    run.add_argument("--resample-alpha", action=argparse.BooleanOptionalAction,
                     default=defaults.resample_alpha, help="resample alpha (default: on)")
    run.add_argument("--resample-sigma-x", action=argparse.BooleanOptionalAction,
                     default=defaults.resample_sigma_x, help="resample sigma_x (default: off)")
    run.add_argument("--resample-sigma-a", action=argparse.BooleanOptionalAction,
                     default=defaults.resample_sigma_a, help="resample sigma_a (default: off)")
    run.add_argument("--heldout-passes", type=_nonneg_int, default=10,
                     help="Gibbs passes when scoring held-out rows (default: 10)")

    ev = sub.add_parser("eval", help="summarize one or more traces")
    ev.add_argument("traces", type=Path, nargs="+", help="trace CSV files")
    ev.add_argument("--last", type=_positive_int, default=100,
                    help="window for tail averages (default: 100)")
    return parser


_CONFIG_KEYS = {"algo", "procs", "iters", "subiters", "seed", "data", "trace", "scheduler",
                "alpha", "sigma_x", "sigma_a", "alpha_shape", "alpha_rate", "variance_step",
                "resample_alpha", "resample_sigma_x", "resample_sigma_a", "heldout_passes"}


def read_config(path: Path, parser: argparse.ArgumentParser) -> dict:
    """Parse a key=value file into run options, typed like the flags."""
    run = parser._subparsers._group_actions[0].choices["run"]
    actions = {a.dest: a for a in run._actions}
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown option {key!r}")
        action = actions[key]
        try:
            if isinstance(action, argparse.BooleanOptionalAction):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                    raise ValueError(f"not a boolean: {value!r}")
                out[key] = value.lower() in ("true", "1", "yes", "on")
            else:
                out[key] = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: {key}: {exc}") from None
        if action.choices is not None and out[key] not in action.choices:
            raise UsageError(f"{path}:{lineno}: {key} must be one of {', '.join(action.choices)}")
    return out


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("IBP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"IBP_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    seed = resolve_seed(args.seed)
    ds = generate_cambridge(args.rows, noise=args.noise, feature_prob=args.feature_prob, seed=seed)
    save_dataset(ds, args.out)
    print(f"wrote {args.rows}x{ds.X.shape[1]} dataset to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _hyper(args) -> HyperParams:
    return HyperParams(alpha=args.alpha, sigma_x=args.sigma_x, sigma_a=args.sigma_a,
                       alpha_prior=(args.alpha_shape, args.alpha_rate),
                       variance_step=args.variance_step, resample_alpha=args.resample_alpha,
                       resample_sigma_x=args.resample_sigma_x,
                       resample_sigma_a=args.resample_sigma_a)


def _run_baseline(sampler, X_test, iterations: int, passes: int, seed: int, writer) -> None:
    """Drive a single-machine baseline, one sweep per trace record."""
    eval_rng = np.random.default_rng([seed, EVAL_STREAM])
    t0 = time.perf_counter()
    for it in range(1, iterations + 1):
        train = sampler.step()
        heldout = math.nan
        if X_test.shape[0]:
            heldout = heldout_joint_loglik(X_test, sampler.A, sampler.pi, sampler.hyper, passes,
                                           eval_rng)
        h = sampler.hyper
        writer.write(TraceRecord(iter=it, wall_s=round(time.perf_counter() - t0, 6),
                                 k_plus=sampler.Z.n_features, alpha=h.alpha, sigma_x=h.sigma_x,
                                 sigma_a=h.sigma_a, train_joint_ll=train,
                                 heldout_joint_ll=heldout, p_prime=0))
        log.info("iter %d K+=%d train=%.3f", it, sampler.Z.n_features, train)


def cmd_run(args, parser) -> int:
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file {args.config} does not exist")
        run = parser._subparsers._group_actions[0].choices["run"]
        run.set_defaults(**read_config(args.config, parser))
        args = parser.parse_args(args.argv)
    if args.data is None or args.trace is None:
        raise UsageError("run needs --data and --trace (as flags or in --config)")
    if args.algo != "hybrid" and args.procs != 1:
        raise UsageError(f"--algo {args.algo} is single-machine; it requires --procs 1")
    seed = resolve_seed(args.seed)
    ds = load_dataset(args.data)
    X_train, X_test = ds.X_train, ds.X_test
    if args.procs > X_train.shape[0]:
        raise UsageError(f"--procs {args.procs} exceeds the {X_train.shape[0]} training rows")
    hyper = _hyper(args)
    meta = {"algo": args.algo, "procs": args.procs, "iters": args.iters,
            "subiters": args.subiters, "seed": seed, "data": args.data,
            "n_train": X_train.shape[0], "n_test": X_test.shape[0],
            "heldout_passes": args.heldout_passes, "heldout_protocol": HELDOUT_PROTOCOL,
            "hyper": hyper}
    with TraceWriter(args.trace, meta) as writer:
        if args.algo == "hybrid":
            config = EngineConfig(processors=args.procs, sub_iterations=args.subiters, seed=seed,
                                  hyper=hyper, heldout_passes=args.heldout_passes)
            with HybridEngine(X_train, config, X_test, scheduler=args.scheduler) as engine:
                engine.run(args.iters, writer)
        else:
            rng = np.random.default_rng(seed)
            cls = CollapsedSampler if args.algo == "collapsed" else UncollapsedSampler
            _run_baseline(cls(X_train, hyper, rng), X_test, args.iters, args.heldout_passes,
                          seed, writer)
    print(f"wrote {args.iters} records to {args.trace}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _finite_mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return statistics.fmean(vals) if vals else math.nan


def summarize(records: list[TraceRecord], last: int) -> dict:
    window = records[-last:]
    k = [r.k_plus for r in window]
    return {
        "records": len(records),
        "final heldout ll": records[-1].heldout_joint_ll,
        f"mean heldout ll (last {last})": _finite_mean(r.heldout_joint_ll for r in window),
        f"mean train ll (last {last})": _finite_mean(r.train_joint_ll for r in window),
        "wall s / iter": records[-1].wall_s / len(records),
        "K+ first": records[0].k_plus,
        "K+ final": records[-1].k_plus,
        "K+ min..max": f"{min(r.k_plus for r in records)}..{max(r.k_plus for r in records)}",
        f"K+ modal (last {last})": Counter(k).most_common(1)[0][0],
        f"K+ mean (last {last})": statistics.fmean(k),
    }


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}" if abs(value) < 1 else f"{value:.2f}"
    return str(value)


def cmd_eval(args) -> int:
    summaries = []
    for path in args.traces:
        records = read_trace(path)
        if not records:
            print(f"{path}: no records", file=sys.stderr)
            return EXIT_RUNTIME
        summaries.append(summarize(records, args.last))
    if len(summaries) == 1:
        print(f"trace: {args.traces[0]}")
        width = max(len(k) for k in summaries[0])
        for key, value in summaries[0].items():
            print(f"  {key:<{width}}  {_cell(value)}")
        return 0
    # rows are metrics, one column per trace; window labels come from the first trace
    keys = list(summaries[0])
    names = [str(p) for p in args.traces]
    cols = [[_cell(v) for v in s.values()] for s in summaries]
    kw = max(len(k) for k in keys)
    widths = [max(len(n), *(len(c) for c in col)) for n, col in zip(names, cols)]
    print(" " * kw + "  " + "  ".join(n.rjust(w) for n, w in zip(names, widths)))
    for i, key in enumerate(keys):
        print(key.ljust(kw) + "  " + "  ".join(col[i].rjust(w) for col, w in zip(cols, widths)))
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "run":
            return cmd_run(args, parser)
        return cmd_eval(args)
    except UsageError as exc:
        print(f"hybrid-ibp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TraceFormatError, ValueError, RuntimeError) as exc:
        print(f"hybrid-ibp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
