"""Command line: ``swarmest run`` and ``swarmest sweep``."""
from __future__ import annotations

import argparse
import sys

from .harness import TOGGLES, ScenarioError, init_flight_distance, run, sweep
from .state import ContractError


def _toggle(s: str) -> tuple[str, bool]:
    name, _, val = s.partition("=")
    if name not in TOGGLES or val not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected one of {', '.join(TOGGLES)} =on|off, got {s!r}")
    return name, val == "on"


def _values(s: str) -> tuple[str, list]:
    name, _, vals = s.partition("=")
    if not name or not vals:
        raise argparse.ArgumentTypeError("expected name=v1,v2,...")
    out = []
    for v in vals.split(","):
        try:
            out.append(float(v) if any(c in v for c in ".eE") else int(v))
        except ValueError:
            out.append(v)
    return name, out


def _summary(rep) -> str:
    lines = [f"scenario {rep.scenario} seed {rep.seed}"]
    for (i, j), (p, r, n) in sorted(rep.rmse.items()):
        tag = "ego" if i == j else f"mutual {i}->{j}"
        lines.append(f"  rmse {tag:<14} pos {p:.4f} m  rot {r:.4f} rad  ({n} samples)")
    for a, (tx, rx) in sorted(rep.bandwidth.items()):
        lines.append(f"  bandwidth uav{a}: tx {tx / 1000:.2f} KB/s  rx {rx / 1000:.2f} KB/s")
    d = init_flight_distance(rep)
    if d != float("inf"):
        lines.append(f"  initialization flight distance {d:.2f} m (complete at {rep.init_complete_time:.2f} s)")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="swarmest", description="Run swarm estimation scenarios.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("scenario")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory for CSV files")
        p.add_argument("--toggle", type=_toggle, action="append", default=[], metavar="NAME=on|off")
        if name == "sweep":
            p.add_argument("--param", type=_values, required=True, metavar="NAME=V1,V2,...")
    args = ap.parse_args(argv)
    toggles = dict(args.toggle)
    try:
        if args.cmd == "run":
            out = args.out or "out"
            print(_summary(run(args.scenario, out, seed=args.seed, toggles=toggles)))
        else:
            name, vals = args.param
            reps = sweep(args.scenario, name, vals, out_dir=args.out, seed=args.seed, toggles=toggles)
            for v, rep in zip(vals, reps):
                print(f"[{name}={v}]")
                print(_summary(rep))
    except (ScenarioError, ContractError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
