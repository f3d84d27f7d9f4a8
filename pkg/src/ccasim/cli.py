"""Command-line front end: ``ccasim list|validate|run|compare|plotdata``.

Exit codes: 0 success, 1 collision in the assessed mode, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .engine import Metrics, compare_modes, compute_metrics, mode_episodes, run, write_trace
from .errors import CcaError, CorruptTrace, ParseError, UnknownKind, ValidationError
from .plotdata import KINDS, write_plotdata
from .scenario import Scenario, describe, load_scenario

EXIT_OK, EXIT_COLLISION, EXIT_USAGE = 0, 1, 2
ENV_DIR = "CCA_SCENARIOS"


def shipped_dir() -> Path:
    return Path(str(resources.files("ccasim") / "scenarios"))


def _user_dir(flag: Optional[str]) -> Optional[Path]:
    value = flag or os.environ.get(ENV_DIR)
    return Path(value) if value else None


def _scan(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.glob("*.toml"))}


def discover(user_dir: Optional[Path], warn=None) -> dict[str, Path]:
    """Shipped scenarios first; user entries with the same name take precedence."""
    found = _scan(shipped_dir())
    if user_dir is not None:
        try:
            if not user_dir.is_dir():
                raise NotADirectoryError(str(user_dir))
            os.listdir(user_dir)
            found.update(_scan(user_dir))
        except OSError as exc:
            if warn:
                warn(f"warning: cannot read scenario directory {user_dir}: {exc}")
    return found


def resolve(name: str, user_dir: Optional[Path]) -> Path:
    path = Path(name)
    if path.suffix == ".toml" and path.is_file():
        return path
    found = discover(user_dir)
    if name not in found:
        raise ParseError(f"no scenario named {name!r}; try `ccasim list`")
    return found[name]


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _metrics_rows(m: Metrics) -> list[tuple[str, str]]:
    d = m.to_dict()
    return [(k, "none" if d[k] is None else str(d[k]).lower() if isinstance(d[k], bool) else str(d[k])) for k in d]


def format_table(columns: dict[str, Metrics]) -> str:
    rows = {name: _metrics_rows(m) for name, m in columns.items()}
    keys = [k for k, _ in next(iter(rows.values()))]
    header = ["metric"] + list(columns)
    table = [header] + [[k] + [dict(rows[c])[k] for c in columns] for k in keys]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in table)


def _load(args) -> Scenario:
    scenario = load_scenario(resolve(args.scenario, _user_dir(args.scenarios)))
    if getattr(args, "preset", None):
        scenario = scenario.with_preset(args.preset)
    if args.seed is not None:
        scenario = scenario.with_bus(rng_seed=args.seed)
    return scenario


def cmd_list(args) -> int:
    for name, path in discover(_user_dir(args.scenarios), warn=_err).items():
        try:
            _, description = describe(path)
        except CcaError as exc:
            description = f"(invalid: {exc})"
        print(f"{name:<12} {description}")
    return EXIT_OK


def cmd_validate(args) -> int:
    s = _load(args)
    print(f"{s.name}: ok ({len(s.remotes) + 1} vehicles, {s.n_ticks} ticks)")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args)
    if args.v2x == "off":
        scenario = scenario.with_bus(drop_probability=1.0)
    trace = run(scenario)
    metrics = compute_metrics(trace)
    csv_path, json_path = write_trace(trace, args.out, metrics=metrics)
    mode = f"v2x-{args.v2x}"
    print(f"scenario {scenario.name} ({mode})")
    print(format_table({mode: metrics}))
    print(f"episodes: {', '.join(f'{m} {a:.2f}-{b:.2f}s' for m, a, b in mode_episodes(trace))}")
    print(f"trace: {csv_path}\nsidecar: {json_path}")
    return EXIT_COLLISION if metrics.collision_occurred else EXIT_OK


def cmd_compare(args) -> int:
    scenario = _load(args)
    result = compare_modes(scenario, out_dir=args.out, seed=args.seed)
    print(f"scenario {scenario.name}")
    print(format_table({"v2x-on": result.on, "v2x-off": result.off}))
    for label, trace in (("v2x-on", result.on_trace), ("v2x-off", result.off_trace)):
        print(f"{label} episodes: {', '.join(f'{m} {a:.2f}-{b:.2f}s' for m, a, b in mode_episodes(trace))}")
    for paths in (result.on_paths, result.off_paths):
        print(f"trace: {paths[0]}")
    return EXIT_COLLISION if result.on.collision_occurred else EXIT_OK


def cmd_plotdata(args) -> int:
    print(write_plotdata(args.trace, args.kind, args.output))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccasim", description="Cooperative collision avoidance simulator")
    parser.add_argument("--scenarios", help=f"user scenario directory (default: ${ENV_DIR})")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list shipped and user scenarios")

    def scenario_cmd(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("scenario", help="scenario name or path to a .toml file")
        p.add_argument("--seed", type=int, default=None, help="bus RNG seed override")
        p.add_argument("--preset", choices=["default", "fast", "smooth"], default=None)
        return p

    scenario_cmd("validate", "parse and validate a scenario")
    p = scenario_cmd("run", "run one mode and write the trace")
    p.add_argument("--v2x", choices=["on", "off"], default="on")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p = scenario_cmd("compare", "run with and without V2X")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")

    p = sub.add_parser("plotdata", help="emit plot-ready CSV from a trace")
    p.add_argument("trace", help="trace CSV written by run/compare")
    p.add_argument("--kind", required=True, help=f"one of {', '.join(KINDS)}")
    p.add_argument("-o", "--output", default=None, help="output CSV (default: next to the trace)")
    return parser


COMMANDS = {"list": cmd_list, "validate": cmd_validate, "run": cmd_run,
            "compare": cmd_compare, "plotdata": cmd_plotdata}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ParseError, ValidationError, UnknownKind, CorruptTrace) as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
