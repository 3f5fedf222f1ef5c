import argparse
import contextlib
import json
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version as package_version
from pathlib import Path
from typing import Optional

if __package__:
    from .bench import format_report, run_benchmark
    from .errors import ConfigError, InvariantViolation, ProvtraceError
    from .forensics import (
        backtrack,
        forward_track,
        input_roots,
        merge_slices,
        resolve_root,
        resolve_seed,
        slice_stats,
        tag_untrusted,
        whole_graph,
    )
    from .graph import build_graph
    from .ingest import format_line, read_trace
    from .logger import get_logger, setup_logging
    from .model import UnitKey, entity_spec
    from .network_utils import parse_networks
    from .partition import partition_events, partition_summary
    from .paths import get_config_path, get_data_dir, get_profiles_path, load_config
    from .profiles import load_profiles
    from .render import RenderOptions, to_dot
    from .scenario import ScenarioKind, ScenarioSpec, generate, verify_ground_truth
    from .signature import load_corpus, mine_signature, signature_to_dict
    from .storage import Dump, read_dump, write_dump
    from .worker import build_pipelined
else:
    # Allow running as a script directly (e.g. python src/provtrace/cli.py)
    sys.path.append(str(Path(__file__).parent))
    from bench import format_report, run_benchmark
    from errors import ConfigError, InvariantViolation, ProvtraceError
    from forensics import (
        backtrack,
        forward_track,
        input_roots,
        merge_slices,
        resolve_root,
        resolve_seed,
        slice_stats,
        tag_untrusted,
        whole_graph,
    )
    from graph import build_graph
    from ingest import format_line, read_trace
    from logger import get_logger, setup_logging
    from model import UnitKey, entity_spec
    from network_utils import parse_networks
    from partition import partition_events, partition_summary
    from paths import get_config_path, get_data_dir, get_profiles_path, load_config
    from profiles import load_profiles
    from render import RenderOptions, to_dot
    from scenario import ScenarioKind, ScenarioSpec, generate, verify_ground_truth
    from signature import load_corpus, mine_signature, signature_to_dict
    from storage import Dump, read_dump, write_dump
    from worker import build_pipelined

logger = get_logger("provtrace.cli")

STDIO = "-"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2


def log_info(message: str):
    logger.info(message)

def log_warn(message: str):
    logger.warning(message)

def log_error(message: str):
    logger.error(message)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1, like every other user error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER_ERROR, f"{self.prog}: error: {message}\n")


@dataclass
class PipelineConfig:
    """Flags merged over the config file, checked before any stage runs."""

    format: str = "pipe"
    profiles: Optional[Path] = None
    inputs: list[str] = field(default_factory=list)
    input_dirs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    verbosity: int = 0
    trusted_networks: Optional[list[str]] = None
    gap_budget: Optional[int] = None
    min_signature_length: int = 3

    @classmethod
    def from_args(cls, args) -> "PipelineConfig":
        config = load_config()
        profiles = getattr(args, "profiles", None)
        trusted = getattr(args, "trusted", None)
        gap = getattr(args, "gap_budget", None)
        min_len = getattr(args, "min_len", None)
        corpus = getattr(args, "corpus", None)
        return cls(
            format=getattr(args, "format", None) or config["default_format"],
            profiles=Path(profiles) if profiles else None,
            inputs=[p for p in [getattr(args, "input", None)] if p],
            input_dirs=[corpus] if corpus else [],
            outputs=[p for p in (getattr(args, name, None) for name in ("out", "dump", "truth")) if p],
            verbosity=getattr(args, "verbose", 0) - getattr(args, "quiet", 0),
            trusted_networks=trusted or config["trusted_networks"],
            gap_budget=gap if gap is not None else config["gap_budget"],
            min_signature_length=min_len if min_len is not None else config["min_signature_length"],
        )

    def validate(self) -> "PipelineConfig":
        for path in self.inputs:
            if path != STDIO and not Path(path).is_file():
                raise ConfigError(f"Input file not found: {path}")
        for path in self.input_dirs:
            if not Path(path).is_dir():
                raise ConfigError(f"Corpus directory not found: {path}")
        for path in self.outputs:
            if path == STDIO:
                continue
            parent = Path(path).expanduser().resolve().parent
            if not parent.is_dir():
                raise ConfigError(f"Output directory does not exist: {parent}")
        if self.profiles is not None and not self.profiles.is_file():
            raise ConfigError(f"Profile config not found: {self.profiles}")
        if self.trusted_networks is not None:
            parse_networks(self.trusted_networks)
        return self

    def resolve_profiles(self):
        return load_profiles(self.profiles or get_profiles_path())


@contextlib.contextmanager
def _open_in(path: str, binary: bool):
    if path == STDIO:
        yield sys.stdin.buffer if binary else sys.stdin
        return
    with open(path, "rb" if binary else "r", **({} if binary else {"encoding": "utf-8"})) as fh:
        yield fh


@contextlib.contextmanager
def _open_out(path: Optional[str]):
    if path is None or path == STDIO:
        yield sys.stdout
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yield fh


def _print_json(data):
    print(json.dumps(data, indent=2, sort_keys=True))


def _data_target(args) -> Optional[str]:
    """Where stage data goes: --out, or stdout unless --json took stdout for the summary."""
    if args.out:
        return args.out
    return None if args.json else STDIO


def _load_dump(args) -> Dump:
    start = time.perf_counter()
    with _open_in(args.input, binary=False) as fh:
        dump = read_dump(fh)
    logger.debug(f"Loaded dump in {time.perf_counter() - start:.2f}s")
    return dump


def _read_events(args, cfg: PipelineConfig):
    name = "<stdin>" if args.input == STDIO else args.input
    with _open_in(args.input, binary=True) as fh:
        reader = read_trace(fh, cfg.format, strict=args.strict, name=name)
        events = list(reader)
    return events, reader.stats


# --- subcommands ------------------------------------------------------------------


def run_ingest(args):
    cfg = PipelineConfig.from_args(args).validate()
    start = time.perf_counter()
    events, stats = _read_events(args, cfg)
    log_info(f"Ingested {stats.parsed} event(s) in {time.perf_counter() - start:.2f}s")
    target = _data_target(args)
    if target is not None:
        with _open_out(target) as out:
            for event in events:
                out.write(format_line(event, args.to or cfg.format))
                out.write("\n")
    if args.json:
        _print_json(stats.as_dict())
    return EXIT_OK


def run_build(args):
    cfg = PipelineConfig.from_args(args).validate()
    start = time.perf_counter()
    name = "<stdin>" if args.input == STDIO else args.input
    with _open_in(args.input, binary=True) as fh:
        reader = read_trace(fh, cfg.format, strict=args.strict, name=name)
        if args.pipelined:
            events = []

            def collected():
                for event in reader:
                    events.append(event)
                    yield event

            graph = build_pipelined(collected(), batch_size=args.batch_size)
        else:
            events = list(reader)
            graph = build_graph(events)
    log_info(
        f"Built graph from {len(events)} event(s) in {time.perf_counter() - start:.2f}s: "
        f"{len(graph.entities)} entities, {len(graph.edges)} edges, {len(graph.diagnostics)} diagnostic(s)"
    )
    target = _data_target(args)
    if target is not None:
        with _open_out(target) as out:
            write_dump(Dump(events, graph), out)
    if args.json:
        _print_json({**graph.summary(), "reader": reader.stats.as_dict()})
    return EXIT_OK


def run_infer(args):
    cfg = PipelineConfig.from_args(args).validate()
    if (args.key_step is None) != (args.key_arg is None):
        raise ConfigError("--key-step and --key-arg must be given together")
    key = UnitKey(args.key_step, args.key_arg) if args.key_step is not None else None
    corpus = load_corpus(args.corpus, cfg.format, max_len=args.max_len, label=args.label, strict=args.strict)
    result = mine_signature(
        corpus, min_len=cfg.min_signature_length, kind=args.kind, app=args.app or "", key=key
    )
    if hasattr(result, "reason"):
        log_warn(f"No signature for {corpus.activity_label}: {result.reason}")
        document = {"kind": args.kind, "signature": None, "reason": result.reason, "length": result.length}
    else:
        log_info(f"Mined {len(result.steps)}-step {args.kind} signature from {corpus.M} trace(s)")
        document = signature_to_dict(result)
    with _open_out(args.out) as out:
        out.write(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def run_partition(args):
    cfg = PipelineConfig.from_args(args).validate()
    profiles = cfg.resolve_profiles()
    dump = _load_dump(args)
    if not dump.events:
        log_warn("Dump carries no events; nothing to partition")
    start = time.perf_counter()
    partition = partition_events(dump.events, profiles, dump.graph, gap_budget=cfg.gap_budget)
    log_info(f"Partitioned in {time.perf_counter() - start:.2f}s")
    target = _data_target(args)
    if target is not None:
        with _open_out(target) as out:
            write_dump(Dump(dump.events, dump.graph, partition), out)
    if args.json:
        _print_json({"profiles": partition_summary(partition), "units": len(partition.units)})
    return EXIT_OK


def _units_for(args, dump: Dump):
    if args.no_partition:
        return None
    if dump.partition is None:
        log_info("Dump has no partition; traversing without unit pruning")
    return dump.partition


def _describe_roots(graph, causal, partition) -> list[dict]:
    inputs = input_roots(causal, partition) if partition is not None else frozenset()
    return [
        {
            "entity": entity_spec(graph.entity(eid)),
            "input": eid in inputs,
            "untrusted": eid in causal.untrusted,
        }
        for eid in causal.root_candidates
    ]


def _print_slice_report(title: str, graph, causal, partition, as_json: bool):
    stats = slice_stats(causal, graph)
    roots = _describe_roots(graph, causal, partition)
    if as_json:
        _print_json(
            {
                "direction": causal.direction,
                "origin": f"{entity_spec(graph.entity(causal.seed.entity))}@{causal.seed.at_seq}",
                "roots": roots,
                "entities": sorted(entity_spec(graph.entity(eid)) for eid in causal.entities),
                "stats": stats,
            }
        )
        return
    print(title)
    print(
        f"Slice: {stats['slice_entities']} entities, {stats['slice_edges']} of {stats['total_edges']} edges "
        f"(reduction {stats['reduction_ratio']:.4f})"
    )
    print("Root candidates:")
    for row in roots:
        tags = [tag for tag in ("input", "untrusted") if row[tag]]
        print(f"  {row['entity']}" + (f"  [{', '.join(tags)}]" if tags else ""))


def _write_slice_dump(path: Optional[str], dump: Dump, causal):
    if path:
        write_dump(Dump(dump.events, dump.graph, dump.partition, causal), path)


def run_backtrack(args):
    cfg = PipelineConfig.from_args(args).validate()
    networks = parse_networks(cfg.trusted_networks)
    dump = _load_dump(args)
    graph = dump.graph
    units = _units_for(args, dump)
    seed = resolve_seed(graph, args.seed)
    start = time.perf_counter()
    causal = tag_untrusted(backtrack(graph, units, seed), graph, networks)
    if args.merge:
        roots = input_roots(causal, dump.partition) if dump.partition is not None else causal.root_candidates
        for root in sorted(roots):
            causal = merge_slices(graph, causal, forward_track(graph, units, root))
    log_info(f"Traversal finished in {time.perf_counter() - start:.3f}s")
    _write_slice_dump(args.dump, dump, causal)
    _print_slice_report(f"Backtrack from {args.seed}", graph, causal, dump.partition, args.json)
    return EXIT_OK


def run_forward(args):
    cfg = PipelineConfig.from_args(args).validate()
    networks = parse_networks(cfg.trusted_networks)
    dump = _load_dump(args)
    graph = dump.graph
    root = resolve_root(graph, args.root)
    causal = tag_untrusted(forward_track(graph, _units_for(args, dump), root, args.from_seq), graph, networks)
    _write_slice_dump(args.dump, dump, causal)
    _print_slice_report(f"Forward from {args.root} after seq {args.from_seq}", graph, causal, dump.partition, args.json)
    return EXIT_OK


def run_render(args):
    PipelineConfig.from_args(args).validate()
    dump = _load_dump(args)
    causal = dump.slice if dump.slice is not None else whole_graph(dump.graph)
    if dump.slice is None:
        log_info("Dump has no slice; rendering the whole graph")
    opts = RenderOptions(
        cluster_by_pgid=not args.no_cluster,
        numbered_edges=not args.no_edge_numbers,
        color_units=args.color_units,
        max_label=args.max_label,
    )
    with _open_out(args.out) as out:
        out.write(to_dot(causal, dump.graph, opts, dump.partition))
    if args.out:
        log_info(f"Wrote DOT to {args.out}")
    return EXIT_OK


def run_simulate(args):
    cfg = PipelineConfig.from_args(args).validate()
    try:
        spec = ScenarioSpec(
            kind=args.scenario,
            benign_units=args.benign_units,
            events_per_unit=args.events_per_unit,
            preamble_events=args.preamble_events,
            opaque_steps=args.opaque_steps,
            blocks_per_unit=args.blocks_per_unit,
            seed=args.seed,
            fmt=cfg.format,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    trace, truth = generate(spec)
    with _open_out(args.out) as out:
        out.write(trace)
    if args.truth:
        Path(args.truth).write_text(truth.to_json(), encoding="utf-8")
        log_info(f"Wrote ground truth to {args.truth}")
    else:
        log_info(f"Ground truth: seed {truth.seed}, root {truth.root}")
    if args.verify:
        report = verify_ground_truth(trace, truth, cfg.resolve_profiles(), cfg.format)
        if report.ok:
            log_info(f"Verified: backtrack from {truth.seed} finds exactly {truth.root}")
        else:
            log_error(f"Verification failed: {json.dumps(report.as_dict(), sort_keys=True)}")
            return EXIT_USER_ERROR
    return EXIT_OK


def run_bench(args):
    PipelineConfig.from_args(args).validate()
    report = run_benchmark(args.events, args.seed, args.pipelined)
    if args.json:
        _print_json(report)
    else:
        print(format_report(report))
    return EXIT_OK


def _get_app_version() -> str:
    try:
        return package_version("provtrace")
    except PackageNotFoundError:
        return "dev"


def collect_info():
    config = load_config()
    profiles_path = get_profiles_path()
    return {
        "app_name": "provtrace",
        "version": _get_app_version(),
        "python_version": sys.version.split()[0],
        "platform": platform.platform(),
        "executable": str(Path(sys.executable).resolve()),
        "cwd": str(Path.cwd().resolve()),
        "paths": {
            "module_file": str(Path(__file__).resolve()),
            "config_path": str(get_config_path()),
            "data_dir": str(get_data_dir().resolve()),
            "profiles_path": str(profiles_path) if profiles_path else None,
        },
        "profiles": [p.name for p in load_profiles(profiles_path)],
        "config": {
            "default_format": config["default_format"],
            "min_signature_length": config["min_signature_length"],
            "gap_budget": config["gap_budget"],
            "trusted_networks": [str(n) for n in parse_networks(config["trusted_networks"])],
        },
        "env_overrides": {
            "PROVTRACE_CONFIG": os.environ.get("PROVTRACE_CONFIG"),
            "PROVTRACE_DATA_DIR": os.environ.get("PROVTRACE_DATA_DIR"),
        },
    }


def format_info_text(info: dict) -> str:
    lines = [
        f"Application: {info['app_name']}",
        f"Version: {info['version']}",
        "",
        "Runtime:",
        f"  Python: {info['python_version']}",
        f"  Platform: {info['platform']}",
        f"  Executable: {info['executable']}",
        f"  CWD: {info['cwd']}",
        "",
        "Paths:",
        f"  Module File: {info['paths']['module_file']}",
        f"  Config Path: {info['paths']['config_path']}",
        f"  Data Dir: {info['paths']['data_dir']}",
        f"  Profiles: {info['paths']['profiles_path'] or '(built-in)'}",
        "",
        f"App Profiles: {', '.join(info['profiles'])}",
        "",
        "Config:",
        f"  Default Format: {info['config']['default_format']}",
        f"  Min Signature Length: {info['config']['min_signature_length']}",
        f"  Gap Budget: {info['config']['gap_budget']}",
        f"  Trusted Networks: {', '.join(info['config']['trusted_networks'])}",
        "",
        "Environment Overrides:",
        f"  PROVTRACE_CONFIG: {info['env_overrides']['PROVTRACE_CONFIG']}",
        f"  PROVTRACE_DATA_DIR: {info['env_overrides']['PROVTRACE_DATA_DIR']}",
    ]
    return "\n".join(lines)


def run_info(args):
    info = collect_info()
    if args.json:
        _print_json(info)
        return EXIT_OK
    print(format_info_text(info))
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def _positive_int(value):
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {number}")
    return number


def _non_negative_int(value):
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {number}")
    return number


def _scenario_kind(value):
    try:
        return ScenarioKind.parse(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="More logging (DEBUG)")
    common.add_argument("-q", "--quiet", action="count", default=0, help="Less logging (WARNING)")
    common.add_argument("--json", action="store_true", help="Print a machine-readable summary on stdout")

    trace_in = argparse.ArgumentParser(add_help=False)
    trace_in.add_argument("input", nargs="?", default=STDIO, help="Trace file (default: stdin)")
    trace_in.add_argument("--format", choices=["pipe", "jsonl"], default=None, help="Trace format (default from config, else pipe)")
    trace_in.add_argument("--strict", action="store_true", help="Fail on the first malformed line instead of skipping it")

    dump_in = argparse.ArgumentParser(add_help=False)
    dump_in.add_argument("input", nargs="?", default=STDIO, help="Graph dump (default: stdin)")

    parser = _Parser(description="provtrace: provenance forensics over system-call traces")
    subparsers = parser.add_subparsers(dest="command", required=True, help="Available commands", parser_class=_Parser)

    # Subcommand: ingest
    parser_ingest = subparsers.add_parser("ingest", parents=[common, trace_in], help="Parse and normalize a trace")
    parser_ingest.add_argument("--to", choices=["pipe", "jsonl"], default=None, help="Output format (default: input format)")
    parser_ingest.add_argument("--out", "-o", type=str, default=None, help="Output path (default: stdout)")
    parser_ingest.set_defaults(func=run_ingest)

    # Subcommand: build
    parser_build = subparsers.add_parser("build", parents=[common, trace_in], help="Build the provenance graph dump")
    parser_build.add_argument("--out", "-o", type=str, default=None, help="Dump path (default: stdout)")
    parser_build.add_argument("--pipelined", action="store_true", help="Parse on a worker thread while building")
    parser_build.add_argument("--batch-size", type=_positive_int, default=4096, help="Events per hand-off batch with --pipelined")
    parser_build.set_defaults(func=run_build)

    # Subcommand: infer
    parser_infer = subparsers.add_parser("infer", parents=[common], help="Mine a unit signature from a trace corpus")
    parser_infer.add_argument("--corpus", required=True, help="Directory of marker-delimited activity traces")
    parser_infer.add_argument("--format", choices=["pipe", "jsonl"], default=None, help="Corpus trace format")
    parser_infer.add_argument("--strict", action="store_true", help="Fail on malformed corpus lines")
    parser_infer.add_argument("--min-len", type=_positive_int, default=None, help="Minimum signature length (default from config, else 3)")
    parser_infer.add_argument("--max-len", type=_positive_int, default=None, help="Truncate each trace to this many events")
    parser_infer.add_argument("--kind", choices=["UnitStart", "UnitSwitch"], default="UnitStart", help="Signature kind")
    parser_infer.add_argument("--key-step", type=_non_negative_int, default=None, help="Signature step holding the unit key")
    parser_infer.add_argument("--key-arg", type=str, default=None, help="Argument of --key-step holding the unit key")
    parser_infer.add_argument("--app", type=str, default=None, help="Application name recorded in the signature")
    parser_infer.add_argument("--label", type=str, default=None, help="Activity label (default: corpus directory name)")
    parser_infer.add_argument("--out", "-o", type=str, default=None, help="Output path (default: stdout)")
    parser_infer.set_defaults(func=run_infer)

    # Subcommand: partition
    parser_part = subparsers.add_parser("partition", parents=[common, dump_in], help="Assign events to execution units")
    parser_part.add_argument("--profiles", type=str, default=None, help="Profile config JSON (default from config/data dir, else built-ins)")
    parser_part.add_argument("--gap-budget", type=_non_negative_int, default=None, help="Max unmatched events between signature steps")
    parser_part.add_argument("--out", "-o", type=str, default=None, help="Dump path (default: stdout)")
    parser_part.set_defaults(func=run_partition)

    # Subcommand: backtrack
    parser_back = subparsers.add_parser("backtrack", parents=[common, dump_in], help="Find root causes of a detection point")
    parser_back.add_argument("--seed", required=True, help="Detection point as <entity-spec>@<seq>")
    parser_back.add_argument("--no-partition", action="store_true", help="Ignore unit assignments (whole-process dependencies)")
    parser_back.add_argument("--merge", action="store_true", help="Add forward slices from the root causes found")
    parser_back.add_argument("--trusted", action="append", default=None, metavar="CIDR", help="Trusted network (repeatable)")
    parser_back.add_argument("--dump", type=str, default=None, help="Also write the dump with the slice (for render)")
    parser_back.set_defaults(func=run_backtrack)

    # Subcommand: forward
    parser_fwd = subparsers.add_parser("forward", parents=[common, dump_in], help="Find everything a root cause affected")
    parser_fwd.add_argument("--root", required=True, help="Root entity spec")
    parser_fwd.add_argument("--from", dest="from_seq", type=_non_negative_int, default=0, help="Follow only edges after this seq")
    parser_fwd.add_argument("--no-partition", action="store_true", help="Ignore unit assignments")
    parser_fwd.add_argument("--trusted", action="append", default=None, metavar="CIDR", help="Trusted network (repeatable)")
    parser_fwd.add_argument("--dump", type=str, default=None, help="Also write the dump with the slice (for render)")
    parser_fwd.set_defaults(func=run_forward)

    # Subcommand: render
    parser_render = subparsers.add_parser("render", parents=[common, dump_in], help="Render a dump's slice as DOT")
    parser_render.add_argument("--out", "-o", type=str, default=None, help="DOT path (default: stdout)")
    parser_render.add_argument("--no-cluster", action="store_true", help="Do not group processes by process group")
    parser_render.add_argument("--color-units", action="store_true", help="Color edges by execution unit")
    parser_render.add_argument("--no-edge-numbers", action="store_true", help="Leave edges unlabeled")
    parser_render.add_argument("--max-label", type=_positive_int, default=40, help="Truncate node labels to this length")
    parser_render.set_defaults(func=run_render)

    # Subcommand: simulate
    parser_sim = subparsers.add_parser("simulate", parents=[common], help="Generate an attack scenario trace with ground truth")
    parser_sim.add_argument("--scenario", type=_scenario_kind, required=True, help="rat, drive-by, im, csrf or dns-rebinding")
    parser_sim.add_argument("--benign-units", type=_non_negative_int, default=10, help="Benign units around the malicious one")
    parser_sim.add_argument("--events-per-unit", type=_positive_int, default=1000, help="Approximate flow events per unit")
    parser_sim.add_argument("--preamble-events", type=_non_negative_int, default=200, help="Initialization events before the first unit")
    parser_sim.add_argument("--opaque-steps", type=_non_negative_int, default=3, help="Helper processes between payload and pivot")
    parser_sim.add_argument("--blocks-per-unit", type=_positive_int, default=3, help="Interleaved blocks per unit")
    parser_sim.add_argument("--seed", type=int, default=0, help="Random seed")
    parser_sim.add_argument("--format", choices=["pipe", "jsonl"], default=None, help="Trace format")
    parser_sim.add_argument("--out", "-o", type=str, default=None, help="Trace path (default: stdout)")
    parser_sim.add_argument("--truth", type=str, default=None, help="Write the ground-truth record here")
    parser_sim.add_argument("--profiles", type=str, default=None, help="Profile config used by --verify")
    parser_sim.add_argument("--verify", action="store_true", help="Run the pipeline on the trace and check the ground truth")
    parser_sim.set_defaults(func=run_simulate)

    # Subcommand: bench
    parser_bench = subparsers.add_parser("bench", parents=[common], help="Measure parse+build throughput")
    parser_bench.add_argument("--events", type=_positive_int, default=1_000_000, help="Synthetic events to process")
    parser_bench.add_argument("--seed", type=int, default=0, help="Random seed")
    parser_bench.add_argument("--pipelined", action="store_true", help="Parse on a worker thread while building")
    parser_bench.set_defaults(func=run_bench)

    # Subcommand: info
    parser_info = subparsers.add_parser("info", parents=[common], help="Show configuration and environment diagnostics")
    parser_info.set_defaults(func=run_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USER_ERROR
    setup_logging(args.verbose - args.quiet)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        log_error(f"internal error: {exc}")
        logger.debug(traceback.format_exc())
        return EXIT_INTERNAL_ERROR
    except ProvtraceError as exc:
        log_error(str(exc))
        return EXIT_USER_ERROR
    except OSError as exc:
        log_error(str(exc))
        return EXIT_USER_ERROR
    except Exception as exc:
        log_error(f"unexpected error: {exc}")
        logger.debug(traceback.format_exc())
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
