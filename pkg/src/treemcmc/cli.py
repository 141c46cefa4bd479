"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime error.
Every command reads and validates all of its inputs before writing output.
"""

from __future__ import annotations

import argparse
import random
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import MarginalReport, compare_runs, edge_marginals, forward_sample, posterior_table, recover_graph, to_dot
from .bn import VariableSet
from .chain import ChainConfig, CyclicKernel, FixedKernel, run_chain
from .errors import SpaceTooLarge, TreeMCMCError, ValidationError
from .formats import PriorConfig, read_bn_spec, read_dataset, read_prior_config, write_dataset
from .scoring import Dataset, FamilyScorer
from .tree import enumerate_tree

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not in (0, 1)")
    return value


def _variables_without_data(cfg: PriorConfig) -> Dataset:
    if cfg.names is None:
        raise ValidationError("without --data the prior config must list 'variables'")
    sizes = []
    for name in cfg.names:
        if name in cfg.labels:
            sizes.append(len(cfg.labels[name]))
        else:
            sizes.append(cfg.domains.get(name, 2))
    return Dataset.empty(VariableSet(cfg.names, sizes))


def cmd_sample(args) -> int:
    bn = read_bn_spec(args.spec)
    if args.n < 0:
        raise ValidationError("-n must be non-negative")
    data = forward_sample(bn, args.n, args.seed)
    write_dataset(data, args.out)
    print(f"wrote {data.n_rows} rows over {len(bn.variables)} variables ({' '.join(bn.variables.names)}) to {args.out}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    cfg = read_prior_config(args.prior)
    data = read_dataset(args.data, cfg) if args.data else _variables_without_data(cfg)
    size = cfg.space_size(data.variables)
    if size > args.max_models:
        raise SpaceTooLarge(f"model space has up to {size:,} models, above --max-models {args.max_models:,}")
    program = cfg.build_program(data.variables)
    rows = posterior_table(program, data, cfg.dirichlet, summary=enumerate_tree(program))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model\tprior\tloglik\tposterior\n")
        for r in rows:
            fh.write(f"{r.model}\t{r.prior!r}\t{r.loglik!r}\t{r.posterior!r}\n")
    print(f"{len(rows)} models; top: {rows[0].model} ({rows[0].posterior:.4f})")
    return EXIT_OK


def cmd_mcmc(args) -> int:
    cfg = read_prior_config(args.prior)
    data = read_dataset(args.data, cfg)
    program = cfg.build_program(data.variables)
    if args.kernel == "fixed":
        if args.pb is None:
            raise ValidationError("--kernel fixed needs --pb")
        kernel = FixedKernel(args.pb)
    else:
        kernel = CyclicKernel(args.cycle_depth or program.max_depth)
    config = ChainConfig(
        iterations=args.iterations,
        burn_in=args.burn_in,
        seed=args.seed,
        kernel=kernel,
        record_every=args.record_every,
    )
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"{out} exists and is not a directory")

    scorer = FamilyScorer(data, cfg.dirichlet)
    started = time.perf_counter()
    trace = run_chain(program, scorer, config, random.Random(args.seed))
    elapsed = time.perf_counter() - started
    report = edge_marginals(trace)

    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.tsv")
    report.write(out / "marginals.tsv")
    label = f"[{args.label}] " if args.label else ""
    print(
        f"{label}{config.iterations} iterations, {len(trace)} retained, "
        f"acceptance rate {trace.acceptance_rate:.4f}, kernel {kernel.describe()}, "
        f"{elapsed:.1f} s"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    a = MarginalReport.read(args.report_a)
    b = MarginalReport.read(args.report_b)
    comparison = compare_runs(a, b)
    comparison.write(args.out)
    worst = f" at {comparison.worst[0]}->{comparison.worst[1]}" if comparison.worst else ""
    print(f"max abs difference {comparison.max_abs_diff:.6f}{worst}")
    return EXIT_OK


def cmd_recover(args) -> int:
    report = MarginalReport.read(args.report)
    edges = recover_graph(report, args.threshold)
    Path(args.out).write_text(to_dot(edges, report.names), encoding="utf-8")
    print(f"{len(edges)} edges above {args.threshold}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    version = f"%(prog)s {__version__}"
    parser = _Parser(prog="treemcmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="draw a CSV dataset from a network spec")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("--spec", required=True, help="network spec file")
    p.add_argument("-n", type=int, required=True, help="number of rows")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("enumerate", help="exact posterior over a small model space")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("--prior", required=True, help="prior/constraint config file")
    p.add_argument("--data", help="CSV dataset (omit for the prior alone)")
    p.add_argument("--out", required=True, help="TSV table to write")
    p.add_argument("--max-models", type=int, default=100_000)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("mcmc", help="run a chain and write its trace and edge marginals")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("--prior", required=True, help="prior/constraint config file")
    p.add_argument("--data", required=True, help="CSV dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--kernel", choices=("cyclic", "fixed"), default="cyclic")
    p.add_argument("--pb", type=_probability, help="backtrack probability for the fixed kernel")
    p.add_argument("--cycle-depth", type=int, help="cycle length of the cyclic kernel (default: tree depth)")
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--label", default="", help="run label for the summary line")
    p.set_defaults(func=cmd_mcmc)

    p = sub.add_parser("compare", help="pair up two marginal reports")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out", required=True, help="TSV table to write")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("recover", help="keep edges above a probability threshold (DOT output)")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("report")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--out", required=True, help="DOT file to write")
    p.set_defaults(func=cmd_recover)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"treemcmc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TreeMCMCError, OSError) as exc:
        print(f"treemcmc {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
