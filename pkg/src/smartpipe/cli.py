"""Command line front end.

Exit status: 0 success, 1 domain error (invalid pipeline, failed run,
unknown id), 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .links import SnapshotPolicy
from .manager import FeedEvent, Pipeline, RunConfig, RunError, load_events
from .provenance import Registry
from .store import ContentStore, StorePolicy
from .tasks import CommandService, FixtureService
from .wiring import WiringError, adjacency, parse, validate

DEFAULT_STORE = ".smartpipe/store"
DEFAULT_REGISTRY = ".smartpipe/registry.jsonl"


class UsageError(Exception):
    pass


def _read_pipeline(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return parse(text)


def _emit(args, text: str, data) -> None:
    if args.format == "structured":
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_validate(args) -> int:
    spec = _read_pipeline(args.pipeline)
    diags = validate(spec)
    text = "\n".join(str(d) for d in diags) or "ok"
    _emit(args, text, [d.to_dict() for d in diags])
    return 1 if any(d.severity == "error" for d in diags) else 0


def graph_text(spec) -> str:
    """Graphviz description: tasks as nodes, wires solid, implicit links dashed."""
    adj = adjacency(spec)
    lines = [f'digraph "{spec.name}" {{']
    for t in adj.tasks:
        lines.append(f'  "{t}";')
    for w in spec.wires:
        if w.producer and w.consumer:
            style = ' style=dashed' if w.implicit else ""
            lines.append(f'  "{w.producer}" -> "{w.consumer}" [label="{w.name}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_graph(args) -> int:
    spec = _read_pipeline(args.pipeline)
    text = graph_text(spec)
    data = {
        "nodes": spec.task_names,
        "edges": [{"from": w.producer, "to": w.consumer, "wire": w.name, "implicit": w.implicit}
                  for w in spec.wires if w.producer and w.consumer],
    }
    if args.output:
        Path(args.output).write_text(text if args.format == "text" else json.dumps(data, indent=2))
    else:
        _emit(args, text, data)
    return 0


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    cfg = yaml.safe_load(raw) or {}
    base = Path(path).resolve().parent

    def fix(argv):
        return [str(base / a) if isinstance(a, str) and a.startswith("./") else str(a) for a in argv]

    for binding in (cfg.get("tasks") or {}).values():
        if "exec" in binding:
            binding["exec"] = tuple(fix(binding["exec"]))
    for svc in (cfg.get("services") or {}).values():
        if "exec" in svc:
            svc["exec"] = fix(svc["exec"])
        if "fixture_file" in svc:
            svc["fixture_file"] = str(base / svc["fixture_file"])
    return cfg


def _services(cfg: dict) -> dict:
    out = {}
    for wire, svc in (cfg.get("services") or {}).items():
        if "fixture" in svc:
            out[wire] = FixtureService(str(svc["fixture"]))
        elif "fixture_file" in svc:
            out[wire] = FixtureService(Path(svc["fixture_file"]).read_bytes())
        elif "exec" in svc:
            out[wire] = CommandService(svc["exec"])
        else:
            raise UsageError(f"service {wire!r} needs fixture, fixture_file or exec")
    return out


def _paths(args) -> tuple[Path, Path]:
    store = Path(args.store or os.environ.get("SMARTPIPE_STORE") or DEFAULT_STORE)
    registry = Path(args.registry or os.environ.get("SMARTPIPE_REGISTRY") or DEFAULT_REGISTRY)
    if store.resolve() == registry.resolve():
        raise UsageError("store and registry paths must differ")
    return store, registry


def cmd_run(args) -> int:
    spec = _read_pipeline(args.pipeline)
    cfg = load_config(args.config)
    run_cfg = dict(cfg.get("run") or {})
    run_cfg["mode"] = args.mode
    run_cfg["target"] = args.target or run_cfg.get("target")
    for name in ("seed", "workers", "max_cycle_iterations"):
        if getattr(args, name) is not None:
            run_cfg[name] = getattr(args, name)
    if args.ghost:
        run_cfg["ghost"] = True
    try:
        config = RunConfig(**run_cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    bindings = {name: dict(b) for name, b in (cfg.get("tasks") or {}).items()}
    policies = {name: SnapshotPolicy(**p) for name, p in (cfg.get("policies") or {}).items()}
    for name in list(bindings) + list(policies):
        if name not in spec.task_names:
            raise UsageError(f"config refers to unknown task {name!r}")

    store_dir, registry_path = _paths(args)
    policy = StorePolicy.from_dict(cfg["store"]) if cfg.get("store") else None
    store = ContentStore(store_dir, policy)
    registry = Registry(registry_path)
    pipe = Pipeline(spec, store, config=config, registry=registry, bindings=bindings,
                    services=_services(cfg), policies=policies)
    state_path = registry_path.with_suffix(".state.json")
    if args.resume:
        if not state_path.exists():
            raise UsageError(f"nothing to resume: {state_path} missing")
        pipe.load_state(state_path)

    events: list[FeedEvent] = []
    if args.events:
        try:
            events = load_events(args.events)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
    for item in args.source or []:
        wire, _, path = item.partition("=")
        if not path:
            raise UsageError(f"--source expects wire=path, got {item!r}")
        events.append(FeedEvent(wire, 0.0, path=path))

    if args.mode == "pull":
        if not config.target:
            raise UsageError("--mode pull needs --target")
        latest: dict[str, list[bytes]] = {}
        for ev in events:
            latest.setdefault(ev.wire, []).append(ev.data())
        report = pipe.run_pull(config.target, latest)
    elif config.ghost:
        report = pipe.ghost_run(events)
    else:
        report = pipe.run_reactive(events)

    pipe.save_state(state_path)
    report_path = Path(args.report) if args.report else registry_path.parent / f"report-{report.run}.jsonl"
    report.write(report_path)
    summary = {
        "run": report.run,
        "mode": report.mode,
        "ghost": report.ghost,
        "executions": len(report.executions),
        "invocations": report.invocations,
        "cache_hits": report.cache_hits,
        "dropped": report.dropped,
        "snapshots": report.snapshots,
        "nodes": report.nodes,
        "target": [{"wire": av.wire, "id": av.id, "payload": av.payload_ref} for av in report.target],
        "report": str(report_path),
    }
    _emit(args, report.summary() + f"report written to {report_path}\n", summary)
    failed = [r for r in report.executions if not r.ok]
    return 1 if failed else 0


def cmd_trace(args) -> int:
    _, registry_path = _paths(args)
    if not registry_path.exists():
        raise UsageError(f"no registry at {registry_path}")
    reg = Registry.load(registry_path)
    if args.what == "map":
        edges = reg.concept_map()
        _emit(args, reg.render_concept_map(),
              [{"from": e.frm, "to": e.to, "relation": e.relation} for e in edges])
        return 0
    if not args.name:
        raise UsageError(f"trace {args.what} needs an argument")
    if args.what == "av":
        hops = reg.traveller(args.name)
        _emit(args, reg.render_traveller(args.name), [h.to_dict() for h in hops])
    else:
        rows = reg.checkpoint(args.name)
        _emit(args, reg.render_checkpoint(args.name),
              [{"wall": w, "major": a, "minor": b, "from": p, "text": t} for w, a, b, p, t in rows])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smartpipe", description="Run and trace wired data pipelines.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("text", "structured"), default="text")

    sp = sub.add_parser("validate", help="check a .wiring file")
    sp.add_argument("pipeline")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("graph", help="emit the task graph in Graphviz form")
    sp.add_argument("pipeline")
    sp.add_argument("-o", "--output")
    common(sp)
    sp.set_defaults(func=cmd_graph)

    sp = sub.add_parser("run", help="execute a pipeline")
    sp.add_argument("pipeline")
    sp.add_argument("--config", help="YAML/JSON file with task bindings, services, policies")
    sp.add_argument("--mode", choices=("reactive", "pull"), default="reactive")
    sp.add_argument("--target")
    sp.add_argument("--events", help="event file: <wire> <delay-ms> <payload-path> per row")
    sp.add_argument("--source", action="append", metavar="WIRE=PATH")
    sp.add_argument("--ghost", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--max-cycle-iterations", dest="max_cycle_iterations", type=int)
    sp.add_argument("--store")
    sp.add_argument("--registry")
    sp.add_argument("--report")
    sp.add_argument("--resume", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("trace", help="print a traveller log, checkpoint log or concept map")
    sp.add_argument("what", choices=("av", "task", "map"))
    sp.add_argument("name", nargs="?")
    sp.add_argument("--store")
    sp.add_argument("--registry")
    common(sp)
    sp.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"smartpipe: {exc}", file=sys.stderr)
        return 2
    except (WiringError, RunError, KeyError, ValueError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"smartpipe: {msg}", file=sys.stderr)
        return 1
