"""Command-line front end.

Exit codes: 0 success, 1 validation or configuration failure, 2 runtime
error (unreadable or malformed input, unwritable output). The default output
directory for ``run`` comes from ``$COLLABMON_OUT`` when ``--out`` is absent.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Optional, Sequence

from collabmon.engine import reconstruct_emerging
from collabmon.indicators import report
from collabmon.metamodel import Indicator
from collabmon.observation import TraceFormatError, TraceStore
from collabmon.scenario import (
    COMPARISON_COLUMNS,
    ConfigInvalid,
    ScenarioConfig,
    build_rfp_case,
    config_faults,
    monitored_events,
    run,
    run_closed_loop,
)
from collabmon.scenario.config import indicator_from_dict

OUT_ENV = "COLLABMON_OUT"
OK, INVALID, RUNTIME = 0, 1, 2


class _Failure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise _Failure(RUNTIME, f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise _Failure(RUNTIME, f"{path} is not valid JSON: {exc}") from exc


def _load_config(path: str) -> ScenarioConfig:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise _Failure(RUNTIME, f"{path}: expected a JSON object")
    try:
        return ScenarioConfig.from_dict(data)
    except ConfigInvalid as exc:
        raise _Failure(INVALID, "\n".join(exc.faults)) from exc


def _load_trace(path: str) -> TraceStore:
    try:
        return TraceStore.read_jsonl(path)
    except OSError as exc:
        raise _Failure(RUNTIME, f"cannot read {path}: {exc.strerror or exc}") from exc
    except TraceFormatError as exc:
        raise _Failure(RUNTIME, f"{path}: {exc}") from exc


def comparison_csv(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in COMPARISON_COLUMNS})
    return buf.getvalue()


def indicators_csv(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "value", "window_start", "window_end", "breach"])
    for row in rows:
        value = row["value"]
        if isinstance(value, dict):
            value = ";".join(f"{k}={v}" for k, v in value.items())
        writer.writerow([row["id"], value, row["window"]["start"], row["window"]["end"], row["breach"]])
    return buf.getvalue()


# --- commands ---------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    faults = config_faults(config)
    for fault in faults:
        print(fault)
    if faults:
        print(f"{len(faults)} fault(s) in {args.config}")
        return INVALID
    print(f"{args.config}: ok ({len(config.processes)} processes, {len(config.workload)} arrivals)")
    return OK


def _write_run(out: Path, rep) -> None:
    write_atomic(out / "trace.jsonl", rep.store.dumps())
    write_atomic(out / "report.json", _dump(rep.to_dict()))
    write_atomic(out / "comparison.csv", comparison_csv(rep.processes))


def _summary(rep) -> str:
    lines = [
        f"{rep.config.name} seed={rep.config.seed}: {len(rep.store)} events, "
        f"{rep.instances['completed']}/{rep.instances['instantiated']} instances completed, "
        f"{rep.mutations} regulation mutation(s)",
    ]
    for row in rep.processes:
        lines.append(
            f"  {row['process_id']:<28} {row['group']:<9} rev {row['revision_initial']}->{row['revision_final']}"
            f"  validations={row['validation_events']}  makespan={row['makespan_mean']}"
        )
    if rep.breaches:
        lines.append("  breaches: " + ", ".join(rep.breaches))
    return "\n".join(lines)


def cmd_run(args: argparse.Namespace) -> int:
    config = build_rfp_case() if args.config is None else _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out_dir = args.out or os.environ.get(OUT_ENV)
    if not out_dir:
        raise _Failure(INVALID, f"no output directory: pass --out or set {OUT_ENV}")
    out = Path(out_dir)
    try:
        reports = run_closed_loop(config) if args.passes == 2 else (run(config),)
    except ConfigInvalid as exc:
        raise _Failure(INVALID, "\n".join(exc.faults)) from exc
    try:
        if len(reports) == 1:
            _write_run(out, reports[0])
        else:
            for n, rep in enumerate(reports, 1):
                _write_run(out / f"pass-{n}", rep)
    except OSError as exc:
        raise _Failure(RUNTIME, f"cannot write to {out}: {exc.strerror or exc}") from exc
    for n, rep in enumerate(reports, 1):
        if len(reports) > 1:
            print(f"pass {n}:")
        print(_summary(rep))
    print(f"wrote {out}")
    return OK


def _indicator_spec(path: str) -> tuple[list[Indicator], Optional[list[str]]]:
    data = _read_json(path)
    if isinstance(data, list):
        data = {"indicators": data}
    if not isinstance(data, dict) or "indicators" not in data:
        raise _Failure(INVALID, f"{path}: expected an object with an 'indicators' list")
    try:
        indicators = [indicator_from_dict(i) for i in data["indicators"]]
    except (KeyError, ValueError, TypeError) as exc:
        raise _Failure(INVALID, f"{path}: bad indicator: {exc}") from exc
    monitored = data.get("monitored")
    return indicators, (list(monitored) if monitored else None)


def cmd_indicators(args: argparse.Namespace) -> int:
    store = _load_trace(args.trace)
    indicators, monitored = _indicator_spec(args.spec)
    if args.window is not None:
        indicators = [Indicator(i.id, i.objective, i.calculation, i.threshold, args.window) for i in indicators]
    events = store.snapshot() if monitored is None else monitored_events(store.snapshot(), monitored)
    rows = report(indicators, events)
    scopes = {i.id: i.calculation.scope for i in indicators}
    for row in rows:
        if not row.scope_known:
            print(f"warning: {row.indicator_id}: scope {scopes[row.indicator_id]!r} not found in trace; value is 0",
                  file=sys.stderr)
    payload = [r.to_dict() for r in rows]
    text = indicators_csv(payload) if args.format == "csv" else _dump(payload)
    sys.stdout.write(text)
    if args.out:
        try:
            write_atomic(Path(args.out), text)
        except OSError as exc:
            raise _Failure(RUNTIME, f"cannot write {args.out}: {exc.strerror or exc}") from exc
    return OK


def cmd_replay(args: argparse.Namespace) -> int:
    store = _load_trace(args.trace)
    sequences = reconstruct_emerging(store.snapshot())
    if args.format == "json":
        if sequences:
            sys.stdout.write(_dump(sequences))
    else:
        for instance_id, activities in sequences.items():
            print(f"{instance_id}: {' -> '.join(activities)}")
    return OK


def cmd_example(args: argparse.Namespace) -> int:
    config = build_rfp_case()
    try:
        write_atomic(Path(args.path), _dump(config.to_dict()))
    except OSError as exc:
        raise _Failure(RUNTIME, f"cannot write {args.path}: {exc.strerror or exc}") from exc
    print(f"wrote {args.path}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collabmon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file for dangling references and unsound processes")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a scenario and write trace.jsonl, report.json, comparison.csv")
    p.add_argument("--config", help="scenario JSON file (default: built-in RFP case)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--passes", type=int, choices=(1, 2), default=1,
                   help="2 re-runs the workload on the regulated definitions (default: 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("indicators", help="evaluate indicators offline over a stored trace")
    p.add_argument("--trace", required=True, help="trace.jsonl written by run")
    p.add_argument("--spec", required=True,
                   help="indicator spec: a scenario file or {'indicators': [...], 'monitored': [...]}")
    p.add_argument("--window", type=int, help="trailing window span applied to every indicator")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="output format (default: json)")
    p.add_argument("--out", help="also write the output to this file")
    p.set_defaults(func=cmd_indicators)

    p = sub.add_parser("replay", help="redraw per-instance activity sequences from a trace")
    p.add_argument("--trace", required=True, help="trace.jsonl")
    p.add_argument("--format", choices=("text", "json"), default="text", help="output format (default: text)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("example", help="write the built-in RFP scenario as JSON")
    p.add_argument("path", help="destination file")
    p.set_defaults(func=cmd_example)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _Failure as exc:
        print(str(exc), file=sys.stderr if exc.code == RUNTIME else sys.stdout)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
