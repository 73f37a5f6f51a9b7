"""Command-line front end.

    roughpme <subcommand> [--config FILE] [--out DIR] [--seed N] [--threads N] [--machine]
    roughpme replay MANIFEST [--out DIR] [--threads N] [--machine]

Exit status: 0 when every assertion passes, 1 when an assertion fails,
2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod, experiments, io
from .characteristics import write_trajectory_csv
from .torus import ScalarField

SUBCOMMANDS = ["solve", "characteristics", "signature", "contraction", "mass", "cocycle", "noise-cts",
               "vanishing-reg", "flow-stability", "analyze", "replay"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Out:
    def __init__(self, machine: bool, verbose: int):
        self.machine, self.verbose = machine, verbose

    def emit(self, event: str, text: str = "", **fields):
        if self.machine:
            print(json.dumps(experiments._jsonable(dict(event=event, **fields)), sort_keys=True), flush=True)
        elif text and (self.verbose or event in ("done", "error", "failure", "replay")):
            print(text, flush=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roughpme", description="Rough porous-medium laboratory.")
    sub = ap.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "replay":
            p.add_argument("manifest", help="manifest.json of an earlier run")
        else:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="output directory (env ROUGHPME_OUT)")
        p.add_argument("--threads", type=int, help="worker processes (env ROUGHPME_THREADS)")
        p.add_argument("--machine", action="store_true", help="JSON-lines output")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def _out_dir(args, name: str) -> Path:
    base = args.out or os.environ.get("ROUGHPME_OUT") or "roughpme_out"
    return Path(base) if args.out else Path(base) / name


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("ROUGHPME_THREADS", "1")))


def _extra_outputs(name: str, cfg: dict, rep, out: Path) -> None:
    if name == "solve":
        tr = getattr(rep, "_trajectory", None)
        if tr is None:
            return
        fields = out / "fields"
        fields.mkdir(exist_ok=True)
        for k in range(len(tr.times)):
            f = ScalarField(tr.grid, tr.states[k])
            io.write_field_csv(fields / f"snapshot_{k:04d}.csv", f)
            io.dump_field(fields / f"snapshot_{k:04d}.bin", f)
        io.write_rows_csv(fields / "times.csv", ["k", "t"], [(k, repr(float(t))) for k, t in enumerate(tr.times)])
    elif name == "characteristics":
        coeffs = cfgmod.build_coefficients(cfg)
        path = cfgmod.build_path(cfg, counter=(7, 0))
        n = int(cfg["experiment"].get("trajectory_points", 4))
        for k in range(n):
            x0 = np.full(coeffs.d, (k + 0.5) / n)
            write_trajectory_csv(out / f"trajectory_{k}.csv", path, coeffs, x0, 1.0 - 2.0 * k / max(n - 1, 1),
                                 path.t0, path.T, float(cfg["experiment"].get("flow_dt", 1e-3)))


def _report_assertions(o: _Out, rep) -> None:
    for a in rep.assertions:
        o.emit("assertion", f"{'PASS' if a['passed'] else 'FAIL'} {a['id']} value={a['value']} bound={a['bound']}",
               **a)


def cmd_run(name: str, args, o: _Out) -> int:
    try:
        cfg = cfgmod.parse_config(args.config) if args.config else cfgmod.parse_config({})
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
    except cfgmod.ConfigError as exc:
        o.emit("error", f"error: {exc}", message=str(exc))
        return EXIT_USAGE
    out = _out_dir(args, name)
    o.emit("start", f"{name}: writing to {out}", experiment=name, out=str(out))
    try:
        rep = experiments.run(name, cfg, _threads(args))
    except (cfgmod.ConfigError, ValueError) as exc:
        o.emit("error", f"error: {exc}", message=str(exc))
        return EXIT_USAGE
    experiments.write_run(out, name, cfg, rep)
    _extra_outputs(name, cfg, rep, out)
    _report_assertions(o, rep)
    if not rep.passed:
        (out / "failures.json").write_text(json.dumps({"experiment": name, "failures": rep.failures}, indent=2))
        o.emit("failure", "failing assertions: " + ", ".join(rep.failures), failures=rep.failures)
    o.emit("done", f"{name}: {'passed' if rep.passed else 'FAILED'} "
                   f"({len(rep.assertions) - len(rep.failures)}/{len(rep.assertions)} assertions, "
                   f"{rep.wall_clock:.1f} s)", passed=rep.passed, wall_clock=rep.wall_clock)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_replay(args, o: _Out) -> int:
    mpath = Path(args.manifest)
    if not mpath.exists():
        o.emit("error", f"error: {mpath} does not exist", message="missing manifest")
        return EXIT_USAGE
    ok, bad = experiments.replay(mpath, _threads(args))
    o.emit("replay", "digests match" if ok else f"digest mismatch: {sorted(bad)}", match=ok,
           mismatches=sorted(bad))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "replay.json").write_text(json.dumps({"manifest": str(mpath), "match": ok,
                                                      "mismatches": {k: list(v) for k, v in bad.items()}}, indent=2))
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    try:
        sys.stdout.reconfigure(line_buffering=True)
    except (AttributeError, ValueError):
        pass
    args = build_parser().parse_args(argv)
    o = _Out(args.machine, args.verbose)
    if args.command == "replay":
        return cmd_replay(args, o)
    return cmd_run(args.command, args, o)


if __name__ == "__main__":
    sys.exit(main())
