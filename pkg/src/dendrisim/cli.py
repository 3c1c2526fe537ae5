"""Command-line entry point: ``dendrisim {validate,compile-morphology,run,list-scenarios}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .chip import validate_config
from .configio import ConfigParseError, load_chip, save_chip
from .engine import NumericalOverflow
from .experiment import load_experiment, reseed, run_experiment
from .morph import ChipDims, Infeasible, compile_morphology, equivalent, load_morphology
from .plasticity import PoolExhausted
from .scenarios import SCENARIOS, scenario_path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_INFEASIBLE = 4
EXIT_OVERFLOW = 5


class Failure(Exception):
    def __init__(self, code: int, category: str, message: str):
        super().__init__(message)
        self.code = code
        self.category = category


def _kind(path: Path) -> str:
    text = path.read_text()
    if "[experiment]" in text:
        return "experiment"
    if "[chip]" in text:
        return "chip"
    return "morphology"


def _load_spec(target: str):
    if target in SCENARIOS:
        return load_experiment(scenario_path(target))
    path = Path(target)
    if not path.exists():
        raise Failure(EXIT_PARSE, "parse", f"{target}: no such file or scenario")
    return load_experiment(path)


def cmd_validate(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise Failure(EXIT_PARSE, "parse", f"{path}: no such file")
    kind = args.kind or _kind(path)
    if kind == "chip":
        problems = validate_config(load_chip(path))
    elif kind == "experiment":
        problems = load_experiment(path).validate()
    else:
        problems = load_morphology(path).validate()
    if problems:
        raise Failure(EXIT_INVALID, "validation", "\n".join(problems))
    print(f"{path}: valid {kind}")
    return EXIT_OK


def cmd_compile(args) -> int:
    m = load_morphology(args.file)
    problems = m.validate()
    if problems:
        raise Failure(EXIT_INVALID, "validation", "\n".join(problems))
    place = compile_morphology(m, ChipDims(args.columns, args.rows), args.current_input)
    if not equivalent(m, place.config):
        raise Failure(EXIT_ERROR, "internal", "compiled network is not equivalent to the morphology")
    out = Path(args.output)
    save_chip(place.config, out)
    for label, cid in place.assignment.items():
        print(f"{label} -> {cid}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = _load_spec(args.experiment)
    if args.seed is not None:
        reseed(spec, args.seed)
    if args.dt is not None:
        spec.engine.dt = args.dt
    if args.t_end is not None:
        spec.engine.t_end = args.t_end
    problems = spec.validate()
    if problems:
        raise Failure(EXIT_INVALID, "validation", "\n".join(problems))
    out = Path(args.out) if args.out else Path("out") / spec.name
    art = run_experiment(spec, out)
    counts = " ".join(f"{k}={v}" for k, v in art.summary["spike_counts"].items())
    print(f"{spec.name}: spikes {counts or '-'}")
    for f in art.files.values():
        print(f"wrote {f}")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in SCENARIOS:
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dendrisim",
                                description="Behavioral simulator for multi-compartment "
                                            "neuromorphic neurons.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a chip, experiment or morphology file")
    v.add_argument("file")
    v.add_argument("--kind", choices=["chip", "experiment", "morphology"])
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("compile-morphology", help="place a morphology onto a chip config")
    c.add_argument("file")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--columns", type=int, default=4)
    c.add_argument("--rows", type=int, default=8)
    c.add_argument("--current-input", help="node that receives the external current")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="run an experiment file or a named scenario")
    r.add_argument("experiment", help="experiment .ini file or scenario name")
    r.add_argument("--seed", type=int)
    r.add_argument("--dt", type=float, help="time step in seconds")
    r.add_argument("--t-end", type=float, help="run length in seconds")
    r.add_argument("--out", help="output directory (default out/<name>)")
    r.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-scenarios", help="list the shipped scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Failure as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except ConfigParseError as exc:
        print(f"error [parse]: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Infeasible as exc:
        print(f"error [infeasible]: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalOverflow as exc:
        print(f"error [overflow]: {exc}", file=sys.stderr)
        probes = getattr(exc, "probes", [])
        if probes:
            print(f"  probes on this node: {' '.join(probes)}", file=sys.stderr)
        last = getattr(exc, "last_voltages", {})
        if last:
            state = " ".join(f"{k}={v:.4g}" for k, v in last.items())
            print(f"  last finite state: {state}", file=sys.stderr)
        return EXIT_OVERFLOW
    except PoolExhausted as exc:
        print(f"error [plasticity]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error [validation]: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
