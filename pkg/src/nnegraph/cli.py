"""Command line interface: ``nne sample|build|measure|experiment|render``.

Exit codes: 0 success, 1 I/O failure, 2 usage or precondition error,
3 domain error (unclosed window vertex, hull-test failure).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .functionals import FunctionalSpec, UnclosedVertexError, evaluate
from .geometry import Space
from .hull import HullFailure
from .mc import CampaignError, load_plan, rate_check, run_campaign, write_results
from .nne import build_nne, format_graph, read_graph, write_graph
from .render import render_svg
from .sampling import (
    RandomStream,
    format_configuration,
    read_configuration,
    sample_poisson_ball,
    write_configuration,
)

EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3


class UsageError(Exception):
    pass


def _env_threads() -> int | None:
    value = os.environ.get("NNE_THREADS")
    if not value:
        return None
    try:
        return max(1, int(value))
    except ValueError:
        raise UsageError(f"NNE_THREADS must be an integer, got {value!r}") from None


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--config", help="key = value file with defaults for this command's options"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nne", description="Nearest neighbour embracing graphs on Poisson processes."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a Poisson process on a ball")
    p.add_argument("--space", choices=["euclidean", "hyperbolic"], default="euclidean")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--radius", type=float, required=False, help="sampling radius R")
    p.add_argument("--window", type=float, help="window radius t (default R)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", default="-")
    _add_config(p)

    p = sub.add_parser("build", help="build the graph of a point file")
    p.add_argument("points")
    p.add_argument("--out", default="-")
    _add_config(p)

    p = sub.add_parser("measure", help="evaluate a functional on a graph file")
    p.add_argument("graph")
    p.add_argument("--alpha", type=float, help="edge-length exponent")
    p.add_argument("--k", type=int, help="outdegree to count")
    p.add_argument("--t", type=float, help="window radius (default: the file's)")
    _add_config(p)

    p = sub.add_parser("experiment", help="run a Monte Carlo campaign from a plan file")
    p.add_argument("plan")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--buffer", type=float)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("render", help="draw a 2-dimensional graph as SVG")
    p.add_argument("graph")
    p.add_argument("--style", choices=["euclidean", "poincare"])
    p.add_argument("--t", "--window", dest="t", type=float, help="window circle radius")
    p.add_argument("--out", default="-")
    _add_config(p)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser: argparse.ArgumentParser, argv, args) -> argparse.Namespace:
    """Re-parse with defaults from ``--config``; explicit flags still win."""
    if not getattr(args, "config", None):
        return args
    sub = _subparser(parser, args.command)
    options = {a.dest: a for a in sub._actions if a.option_strings and a.dest != "config"}
    values = {}
    with open(args.config, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{args.config}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in options:
                raise UsageError(f"{args.config}:{n}: unknown key {key!r} for '{args.command}'")
            action = options[key]
            try:
                values[key] = action.type(value) if action.type else value
            except ValueError as exc:
                raise UsageError(f"{args.config}:{n}: {exc}") from None
            if action.choices and values[key] not in action.choices:
                raise UsageError(f"{args.config}:{n}: invalid value {value!r} for {key}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="ascii")


def cmd_sample(args) -> int:
    if args.radius is None:
        raise UsageError("--radius is required")
    if not args.radius > 0:
        raise UsageError(f"--radius must be positive, got {args.radius}")
    if args.dim < 2:
        raise UsageError("--dim must be at least 2")
    space = Space(args.space, args.dim)
    config = sample_poisson_ball(space, args.radius, RandomStream(args.seed, args.stream))
    if args.window is not None:
        if not 0 < args.window <= args.radius:
            raise UsageError("--window must lie in (0, radius]")
        config = replace(config, window_radius=float(args.window))
    if args.out == "-":
        sys.stdout.write(format_configuration(config))
    else:
        write_configuration(config, args.out)
    return 0


def cmd_build(args) -> int:
    config = read_configuration(args.points)
    graph = build_nne(config)
    if args.out == "-":
        sys.stdout.write(format_graph(graph))
    else:
        write_graph(graph, args.out)
    return 0


def cmd_measure(args) -> int:
    if (args.alpha is None) == (args.k is None):
        raise UsageError("give exactly one of --alpha and --k")
    graph = read_graph(args.graph)
    t = graph.config.window_radius if args.t is None else args.t
    try:
        if args.alpha is not None:
            spec = FunctionalSpec.length_power(args.alpha, t)
        else:
            spec = FunctionalSpec.outdegree_count(args.k, t)
        spec.check(graph.space)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    value = evaluate(graph, spec, strict=True)
    print(format(value, ".17g"))
    return 0


def cmd_experiment(args) -> int:
    overrides = {
        "replications": args.replications,
        "seed": args.seed,
        "buffer": args.buffer,
    }
    # precedence: --threads, then NNE_THREADS, then the plan's own value
    threads = args.threads if args.threads is not None else _env_threads()
    try:
        plan = load_plan(args.plan, overrides)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.plan}: {exc}") from None
    result = run_campaign(plan, threads=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(result, out / "results.csv", out / "summary.json")
    for spec, st in zip(result.specs, result.stats):
        print(
            f"{spec.label():<16} t={spec.t:<6g} mean={st.mean:.6g} var={st.variance:.6g} "
            f"var/vol={st.variance / st.vol_bt:.4g} ks={st.ks:.4f} w1={st.wasserstein:.4f}"
        )
    if len(plan.t_values) >= 3:
        groups = [("length_power", a) for a in plan.alphas] + [
            ("outdegree_count", k) for k in plan.ks
        ]
        for kind, param in groups:
            cells = result.cells(kind, param)
            rc = rate_check(plan.space, [s.t for s, _ in cells], [st.ks for _, st in cells])
            print(
                f"{cells[0][0].label():<16} ks ~ vol^slope: slope={rc.slope:.3f} "
                f"95% [{rc.ci[0]:.3f}, {rc.ci[1]:.3f}], ks*sqrt(vol) spread={rc.scaled_spread:.2f}"
            )
    return 0


def cmd_render(args) -> int:
    graph = read_graph(args.graph)
    if graph.space.dim != 2:
        raise UsageError(f"rendering needs a 2-dimensional graph, got d={graph.space.dim}")
    try:
        svg = render_svg(graph, args.style, args.t)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_text(args.out, svg)
    return 0


COMMANDS = {
    "sample": cmd_sample,
    "build": cmd_build,
    "measure": cmd_measure,
    "experiment": cmd_experiment,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    try:
        args = _apply_config(parser, argv, args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nne {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnclosedVertexError, CampaignError, HullFailure) as exc:
        vertex = getattr(exc, "vertex", None)
        extra = f" [vertex {vertex}]" if vertex is not None else ""
        print(f"nne {args.command}: {exc}{extra}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"nne {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed input files
        print(f"nne {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
