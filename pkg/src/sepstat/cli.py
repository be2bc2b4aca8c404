"""Command line entry point: ``sepstat run|check|tracks``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .chamber import write_tracks_csv
from .checks import MODULES, check_all
from .runner import RunError, dumps, run
from .scenario import ScenarioError, load_scenario, preset_names, preset_path

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _resolve(ref: str):
    """A scenario file path, or the name of a bundled preset."""
    p = Path(ref)
    if not p.exists() and ref in preset_names():
        p = preset_path(ref)
    return load_scenario(p)


def _positive(x: str) -> int:
    v = int(x)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg(x: str) -> int:
    v = int(x)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sepstat", description="Separation-status measurement simulator.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one scenario and emit a JSON report")
    r.add_argument("file", help="scenario JSON file or preset name")
    r.add_argument("--seed", type=_nonneg)
    r.add_argument("--trials", type=_nonneg)
    r.add_argument("--out", help="write the report here instead of stdout")
    r.add_argument("--workers", type=_positive, default=1)
    r.add_argument("--samples-csv", help="write sampled HBT signals (trial,signal)")
    r.add_argument("--timing", action="store_true", help="add wall-clock timing (breaks byte determinism)")
    r.add_argument("--omit-states", action="store_true", help="leave branch state matrices out of the report")

    c = sub.add_parser("check", help="run the invariant suite on the bundled presets")
    c.add_argument("--filter", choices=MODULES, help="only checks of this module")
    c.add_argument("--tolerance", type=float, help="override every upper-bound tolerance")
    c.add_argument("--workers", type=_positive, default=1)
    c.add_argument("--json", action="store_true", help="emit the full check report as JSON")

    t = sub.add_parser("tracks", help="sample chamber tracks and export them as CSV")
    t.add_argument("file", help="chamber scenario JSON file or preset name")
    t.add_argument("--csv", required=True, help="output path (columns trial,layer,cube)")
    t.add_argument("--seed", type=_nonneg)
    t.add_argument("--trials", type=_nonneg)
    t.add_argument("--workers", type=_positive, default=1)

    sub.add_parser("presets", help="list bundled preset names")
    return ap


def _cmd_run(a) -> int:
    sc = _resolve(a.file)
    res = run(sc, a.seed, a.trials, a.workers, a.timing, not a.omit_states)
    text = dumps(res.report)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if a.samples_csv:
        if res.samples is None:
            raise ScenarioError("--samples-csv needs an hbt scenario with trials > 0")
        with open(a.samples_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "signal"])
            w.writerows(res.samples)
    return EXIT_OK if res.passed else EXIT_FAIL


def _cmd_check(a) -> int:
    rep = check_all(a.filter, a.tolerance, a.workers)
    if a.json:
        sys.stdout.write(json.dumps(rep, sort_keys=True, indent=2) + "\n")
    else:
        for c in rep["checks"]:
            flag = "PASS" if c["pass"] else "FAIL"
            rel = "<=" if c["relation"] == "<=" else ">="
            res = "n/a" if c["residual"] is None else f"{c['residual']:.3e}"
            print(f"{flag}  {c['module']:<22} {c['name']}  ({res} {rel} {c['bound']:.1e})")
        n_fail = sum(not c["pass"] for c in rep["checks"])
        print(f"{len(rep['checks']) - n_fail}/{len(rep['checks'])} checks passed")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


def _cmd_tracks(a) -> int:
    sc = _resolve(a.file)
    if sc.kind != "chamber":
        raise ScenarioError(f"tracks needs a chamber scenario, got kind {sc.kind!r}")
    res = run(sc, a.seed, a.trials, a.workers, states=False)
    write_tracks_csv(a.csv, res.tracks)
    summary = res.report["result"]["tracks"]
    print(f"{summary['trials']} tracks written to {a.csv}; straight fraction {summary['straight_fraction']:.4f}")
    return EXIT_OK if res.passed else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        if a.cmd == "run":
            return _cmd_run(a)
        if a.cmd == "check":
            return _cmd_check(a)
        if a.cmd == "tracks":
            return _cmd_tracks(a)
        print("\n".join(preset_names()))
        return EXIT_OK
    except (ScenarioError, RunError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
