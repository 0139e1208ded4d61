"""Command-line entry point: ``rtnic run | sweep | check``.

Exit codes: 0 success, 1 validation error (bad arguments, bad scenario,
failed check), 2 I/O error.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from rtnic.experiments import (
    PAPER_LABELS,
    PAPER_RATES,
    ScenarioError,
    SweepError,
    SweepGrid,
    load_scenario,
    run_scenario,
    run_sweep,
)
from rtnic.metrics import export_csv, fmt, interrupt_ratio
from rtnic.nic import NicConfigError, QueueConfig, replay_trace
from rtnic.oracle import random_trace, reference_replay
from rtnic.traffic import TraceError, load_trace

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_list(kind):
    def parse(text):
        try:
            return tuple(kind(x) for x in text.split(",") if x)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtnic", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one scenario", allow_abbrev=False)
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--force", action="store_true")

    sw = sub.add_parser("sweep", help="moderation label x flood rate grid",
                        allow_abbrev=False)
    sw.add_argument("--scenario", required=True, type=Path)
    sw.add_argument("--out", required=True, type=Path)
    sw.add_argument("--grid", choices=("paper", "custom"), default="paper")
    sw.add_argument("--labels", type=_csv_list(str),
                    help="comma-separated labels for --grid custom")
    sw.add_argument("--rates", type=_csv_list(int),
                    help="comma-separated flood rates (pps) for --grid custom")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--force", action="store_true")

    ck = sub.add_parser("check", help="event engine vs brute-force moderation replay",
                        allow_abbrev=False)
    src = ck.add_mutually_exclusive_group()
    src.add_argument("--packets", type=int, default=1000)
    src.add_argument("--trace", type=Path)
    ck.add_argument("--abs", type=int, default=3200, dest="absolute")
    ck.add_argument("--pkt", type=int, default=0)
    ck.add_argument("--threshold", type=int, default=0)
    ck.add_argument("--capacity", type=int, default=128)
    ck.add_argument("--seed", type=int, default=0)
    ck.add_argument("--runs", type=int, default=1)
    return p


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists():
        if not path.is_dir():
            raise FileExistsError(f"{path} exists and is not a directory")
        if any(path.iterdir()):
            if not force:
                raise FileExistsError(f"{path} is not empty (use --force to overwrite)")
            shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _summary_line(label, rate, packets, interrupts, ratio) -> str:
    return f"{label} rate={fmt(rate)} packets={packets} interrupts={interrupts} ratio={fmt(ratio)}"


def cmd_run(args) -> int:
    s = load_scenario(args.scenario)
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    _prepare_out(args.out, args.force)
    stats = run_scenario(s)
    export_csv(stats, args.out)
    rate = sum(f.rate_pps for f in s.floods)
    print(_summary_line(s.label, rate, stats.packets, stats.interrupts, interrupt_ratio(stats)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    s = load_scenario(args.scenario)
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    if args.grid == "paper":
        grid = SweepGrid(PAPER_LABELS, PAPER_RATES)
    else:
        if not args.labels or not args.rates:
            raise UsageError("rtnic sweep: --grid custom needs --labels and --rates")
        grid = SweepGrid(args.labels, args.rates)
    if args.jobs < 1:
        raise UsageError("rtnic sweep: --jobs must be >= 1")
    _prepare_out(args.out, args.force)
    run_sweep(s, grid, args.out, jobs=args.jobs,
              on_row=lambda r: print(_summary_line(r["label"], r["rate_pps"], r["packets"],
                                                   r["interrupts"], r["interrupt_ratio"]),
                                     flush=True))
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = QueueConfig(capacity=args.capacity, absolute_timer_us=args.absolute,
                      packet_timer_us=args.pkt, counter_threshold=args.threshold)
    if args.trace is not None:
        traces = [load_trace(args.trace)[0].tolist()]
    else:
        if args.packets < 0 or args.runs < 1:
            raise UsageError("rtnic check: --packets must be >= 0 and --runs >= 1")
        traces = [random_trace(args.packets, args.seed + k) for k in range(args.runs)]
    for k, trace in enumerate(traces):
        got = replay_trace(cfg, trace)
        want = reference_replay(trace, cfg.capacity, cfg.absolute_timer_us,
                                cfg.packet_timer_us, cfg.counter_threshold)
        if got != want:
            i = next((i for i, (a, b) in enumerate(zip(got, want)) if a != b),
                     min(len(got), len(want)))
            print(f"FAIL trace {k}: interrupt #{i}: engine "
                  f"{got[i] if i < len(got) else None} vs reference "
                  f"{want[i] if i < len(want) else None}")
            return EXIT_INVALID
    n = sum(len(t) for t in traces)
    print(f"PASS {len(traces)} trace(s), {n} packets, {len(got)} interrupts in last trace")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check}[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, NicConfigError, TraceError, SweepError, ValueError) as e:
        if isinstance(e, SweepError) and isinstance(e.__cause__, OSError):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
