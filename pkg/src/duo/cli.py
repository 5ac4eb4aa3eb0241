"""``duo`` command line: run | gen | bench | serve | interactive | init-model."""
from __future__ import annotations

import argparse
import asyncio
import glob
import hashlib
import json
import logging
import os
import sys
from typing import List, Optional

from .dataset import synth_examples
from .errors import ConfigurationError, TraceError
from .mock import MockModel, MockScript, default_script
from .model import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .scheduler import SchedulerConfig, Session
from .trace import parse_mix, read_trace, synth_traces, write_trace
from .verify import check_trace

log = logging.getLogger("duo")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("DUO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def load_model(args):
    try:
        if getattr(args, "mock", None):
            if args.mock == "default":
                return MockModel(default_script())
            return MockModel(MockScript.load(args.mock))
        if getattr(args, "model", None):
            return load_checkpoint(args.model)
        return init_model(ModelConfig(seed=args.seed))
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {exc.filename}") from None
    except (ConfigurationError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model: {exc}") from None


def scheduler_config(args) -> SchedulerConfig:
    try:
        return SchedulerConfig(alpha=args.alpha, max_output_tokens=args.max_tokens)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _read_trace(path):
    try:
        return read_trace(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except TraceError as exc:
        raise UsageError(f"{path}: parse error: {exc}") from None


# -- subcommands -------------------------------------------------------------

def cmd_run(args, out=sys.stdout) -> int:
    trace = _read_trace(args.trace)
    model = load_model(args)
    config = scheduler_config(args)
    transcript, report = check_trace(model, trace, config)
    out.write(transcript.to_jsonl())
    for ev in transcript.events:
        out.write(json.dumps({"event": ev}) + "\n")
    for late in transcript.late_events:
        out.write(json.dumps({"late_event": late}) + "\n")
    out.write(json.dumps({"report": report.to_dict()}) + "\n")
    if args.figures:
        from .plotting import plot_timeline

        os.makedirs(args.figures, exist_ok=True)
        name = os.path.splitext(os.path.basename(args.trace))[0]
        plot_timeline(transcript, os.path.join(args.figures, f"{name}_timeline.png"), title=name)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_gen(args, out=sys.stdout) -> int:
    try:
        mix = parse_mix(args.mix)
    except (TraceError, ValueError) as exc:
        raise UsageError(f"validation error: {exc}") from None
    if args.n <= 0:
        raise UsageError("n must be positive")
    traces = synth_traces(args.n, mix, args.seed, args.max_event_cycle)
    try:
        os.makedirs(args.out, exist_ok=True)
        files = []
        for i, tr in enumerate(traces):
            name = f"trace_{i:04d}.jsonl"
            path = os.path.join(args.out, name)
            write_trace(tr, path)
            with open(path, "rb") as f:
                digest = hashlib.sha256(f.read()).hexdigest()
            files.append({"file": name, "scenario": tr.scenario.value,
                          "gold_label": tr.gold_label, "sha256": digest})
        manifest = {"n": args.n, "seed": args.seed,
                    "mix": {k.value: v for k, v in mix.items()}, "traces": files}
        if args.examples:
            ex_path = os.path.join(args.out, "examples.jsonl")
            with open(ex_path, "w") as f:
                for ex in synth_examples(args.examples, args.seed):
                    f.write(ex.to_json() + "\n")
            manifest["examples"] = "examples.jsonl"
        with open(os.path.join(args.out, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as exc:
        raise UsageError(f"cannot write to {args.out}: {exc.strerror}") from None
    out.write(f"wrote {len(traces)} traces to {args.out}\n")
    return EXIT_OK


def bench(trace_dir: str, model, config: SchedulerConfig, session_cls=Session, out=sys.stdout):
    """Replay every trace in ``trace_dir``; returns rows (name, duo, standard, ok)."""
    paths = sorted(glob.glob(os.path.join(trace_dir, "*.jsonl")))
    paths = [p for p in paths if os.path.basename(p) != "examples.jsonl"]
    if not paths:
        raise UsageError(f"no traces in {trace_dir}")
    rows = []
    out.write("trace\tscenario\tduo_forwards\tstandard_forwards\tparity\n")
    for p in paths:
        trace = _read_trace(p)
        _, report = check_trace(model, trace, config, session_cls=session_cls)
        name = os.path.basename(p)
        rows.append((name, report.duo_forwards, report.standard_forwards, report.forward_parity))
        out.write(f"{name}\t{trace.scenario.value}\t{report.duo_forwards}\t"
                  f"{report.standard_forwards}\t{'ok' if report.forward_parity else 'FAIL'}\n")
    n_ok = sum(r[3] for r in rows)
    out.write(f"parity {n_ok}/{len(rows)}\n")
    return rows


def cmd_bench(args, out=sys.stdout, session_cls=Session) -> int:
    model = load_model(args)
    rows = bench(args.trace_dir, model, scheduler_config(args), session_cls, out)
    if args.figures:
        from .plotting import plot_bench

        os.makedirs(args.figures, exist_ok=True)
        plot_bench(rows, os.path.join(args.figures, "bench_forwards.png"))
    return EXIT_OK if all(r[3] for r in rows) else EXIT_FAIL


def cmd_serve(args, out=sys.stdout) -> int:
    from .server import DuoServer, parse_listen

    model = load_model(args)
    try:
        host, port = parse_listen(args.listen)
    except ValueError:
        raise UsageError(f"bad listen address {args.listen!r}") from None
    server = DuoServer(model, scheduler_config(args), cycle_delay=args.cycle_delay)
    try:
        asyncio.run(server.serve_forever(host, port))
    except OSError as exc:
        raise UsageError(f"cannot listen on {args.listen}: {exc.strerror}") from None
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_interactive(args, out=sys.stdout) -> int:
    from .interactive import run_interactive

    model = load_model(args)
    return run_interactive(model, scheduler_config(args), sys.stdin, out,
                           prompt=args.prompt, cycle_delay=args.cycle_delay)


def cmd_init_model(args, out=sys.stdout) -> int:
    try:
        cfg = ModelConfig(n_layers=args.layers, n_heads=args.heads, d_model=args.d_model,
                          max_position=args.max_position, seed=args.seed)
    except ConfigurationError as exc:
        raise UsageError(f"configuration error: {exc}") from None
    model = init_model(cfg)
    try:
        save_checkpoint(model, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc.strerror}") from None
    out.write(f"{args.out}\t{model.checksum()}\n")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="DUO1 checkpoint (default: seeded tiny model)")
    common.add_argument("--mock", help="mock script JSON, or 'default' for the built-in script")
    common.add_argument("--alpha", type=int, default=4, help="speculative tokens per cycle")
    common.add_argument("--max-tokens", type=int, default=256, dest="max_tokens")
    common.add_argument("--seed", type=int, default=0)

    p = argparse.ArgumentParser(prog="duo", description="Duplex decoding simulator and server.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="replay one trace and verify it")
    r.add_argument("trace")
    r.add_argument("--figures", help="directory for the timeline figure")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="synthesize traces (and training examples)")
    g.add_argument("n", type=int)
    g.add_argument("--mix", default="plain=0.34,interruption=0.33,non_awakening=0.33")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--examples", type=int, default=0, help="also write N training examples")
    g.add_argument("--max-event-cycle", type=int, default=3, dest="max_event_cycle")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench", parents=[common], help="forward-count parity over a trace directory")
    b.add_argument("trace_dir")
    b.add_argument("--figures", help="directory for the bench figure")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("serve", parents=[common], help="serve duplex sessions over TCP")
    s.add_argument("--listen", default="127.0.0.1:7878")
    s.add_argument("--cycle-delay", type=float, default=0.05, dest="cycle_delay")
    s.set_defaults(func=cmd_serve)

    i = sub.add_parser("interactive", parents=[common], help="type while the model answers")
    i.add_argument("--prompt", help="opening query (default: first typed line)")
    i.add_argument("--cycle-delay", type=float, default=0.05, dest="cycle_delay")
    i.set_defaults(func=cmd_interactive)

    m = sub.add_parser("init-model", help="write a seeded tiny model checkpoint")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--layers", type=int, default=2)
    m.add_argument("--heads", type=int, default=2)
    m.add_argument("--d-model", type=int, default=64, dest="d_model")
    m.add_argument("--max-position", type=int, default=1024, dest="max_position")
    m.set_defaults(func=cmd_init_model)
    return p


def main(argv: Optional[List[str]] = None, out=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out or sys.stdout)
    except UsageError as exc:
        sys.stderr.write(f"duo {args.command}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
