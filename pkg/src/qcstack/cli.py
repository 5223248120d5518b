"""Command line: ``qcstack compile | run | verify | scan | report``.

Exit codes
    0  success
    1  program parse error
    2  schedule error (including queue overflow)
    3  verification failure (reports are still written)
    4  scan fit failure
    5  configuration or input file error
    64 command-line usage error
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .api import (
    ConfigError,
    RunConfig,
    ScanSpec,
    dumps,
    run_scan,
    run_verify,
    scan_plot_rows,
    write_atomic,
)
from .device import DeviceConfig
from .engine import Engine, EngineError, sync_start, trace_to_bytes, write_trace_csv
from .pulse import PulseLangError, parse_program
from .schedule import ScheduleError, schedule, stream_to_bytes

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_SCHEDULE = 2
EXIT_VERIFY = 3
EXIT_FIT = 4
EXIT_CONFIG = 5
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"qcstack: {msg}", file=sys.stderr)


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "format", None):
        cfg.formats = (args.format,)
    RunConfig.__post_init__(cfg)
    return cfg


def _compile(path, device: DeviceConfig):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    return schedule(parse_program(text), device)


def cmd_compile(args) -> int:
    cfg = _load_config(args)
    streams = _compile(args.program, cfg.device)
    out = Path(cfg.output_dir)
    stem = Path(args.program).stem
    for s in streams:
        write_atomic(out / f"{stem}.unit{s.unit}.qcis", stream_to_bytes(s))
        write_atomic(out / f"{stem}.unit{s.unit}.lst", s.listing())
    total = sum(len(s.words) for s in streams)
    print(f"compiled {args.program}: {len(streams)} unit(s), {total} instruction words -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    streams = _compile(args.program, cfg.device)
    eng = Engine(cfg.device)
    eng.load(streams)
    eng.arm()
    sync_start([eng])
    n = args.ticks if args.ticks is not None else max(s.total_ticks for s in streams)
    eng.run(n)
    out = Path(cfg.output_dir)
    channels = sorted({s.unit * cfg.device.channels_per_unit + w.channel for s in streams for w in s.words})
    if args.channels:
        channels = args.channels
    traces = [eng.trace(ch) for ch in channels]
    for tr in traces:
        write_atomic(out / f"trace_ch{tr.channel}.qctr", trace_to_bytes(tr))
    for i, cap in enumerate(eng.captures):
        write_atomic(out / f"capture{i:03d}_ch{cap.channel}.qctr", trace_to_bytes(cap))
    if "csv" in cfg.formats:
        buf = io.StringIO()
        write_trace_csv(buf, traces)
        write_atomic(out / "traces.csv", buf.getvalue())
    summary = {
        "ticks": n,
        "channels": channels,
        "loaded": eng.loaded_count,
        "fired": eng.fired_count,
        "remaining": eng.remaining_count,
        "high_water": {str(k): v for k, v in sorted(eng.high_water.items())},
        "valid_in": {str(ch): eng.valid_in[ch] for ch in channels},
        "valid_out": {str(ch): eng.valid_out(ch) for ch in channels},
        "captures": [
            {"channel": c.channel, "start_tick": c.start_tick, "decimation": c.decimation,
             "count": len(c.samples)}
            for c in eng.captures
        ],
    }
    write_atomic(out / "run.json", dumps(summary))
    print(f"ran {n} ticks on {len(channels)} channel(s) -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    results, summary = run_verify(cfg, args.fault)
    out = Path(cfg.output_dir)
    for r in results:
        if "json" in cfg.formats:
            write_atomic(out / f"{r['case']}.json", dumps(r))
    if "csv" in cfg.formats:
        write_atomic(out / "summary.csv", _summary_csv(results))
    write_atomic(out / "summary.json", dumps(summary))
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['case']}")
    print(f"{summary['passed']}/{summary['cases']} cases passed")
    if not summary["all_passed"]:
        _err("verification failed: " + ", ".join(summary["failed"]))
        return EXIT_VERIFY
    return EXIT_OK


def _summary_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "passed", "max_abs_error", "worst_spur_dbc"])
    for r in results:
        cmp = r.get("comparison") or {}
        spec = r.get("spectral") or {}
        w.writerow([r["case"], int(r["passed"]), cmp.get("max_abs_error", ""),
                    spec.get("worst_spur_dbc", "")])
    return buf.getvalue()


def cmd_scan(args) -> int:
    spec = ScanSpec.load(args.spec)
    out = Path(args.out or "out")
    result, cal = run_scan(spec, args.seed)
    buf = io.StringIO()
    result.write_csv(buf)
    write_atomic(out / "scan.csv", buf.getvalue())
    plot = io.StringIO()
    w = csv.writer(plot, lineterminator="\n")
    w.writerow(["x", "p_estimate", "p_fit"])
    for row in scan_plot_rows(result):
        w.writerow([repr(v) for v in row])
    write_atomic(out / "scan_plot.csv", plot.getvalue())
    doc = json.loads(result.to_json())
    doc["calibration"] = cal
    doc["true_frequency"] = spec.true_frequency
    write_atomic(out / "scan.json", dumps(doc))
    if not result.fit_ok:
        _err(f"fit failed: {result.fit_error}")
        return EXIT_FIT
    print(f"fitted frequency: {result.fitted_frequency!r} per unit {result.axis}")
    print(f"pi-pulse {result.axis}: {result.pi_parameter!r}")
    if cal:
        print(f"calibrated X amplitude: {cal['entries']['X']['amplitude']!r}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.directory)
    rows = []
    for path in sorted(root.glob("*.json")):
        if path.name in ("summary.json", "run.json", "scan.json"):
            continue
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if isinstance(doc, dict) and "passed" in doc:
            rows.append((doc.get("case", path.stem), bool(doc["passed"])))
    if not rows:
        raise ConfigError(f"no reports found in {root}")
    for name, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    failed = [n for n, ok in rows if not ok]
    print(f"{len(rows) - len(failed)}/{len(rows)} reports passed")
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case", "passed"])
        w.writerows((n, int(ok)) for n, ok in rows)
        write_atomic(Path(args.out or root) / "report.csv", buf.getvalue())
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qcstack", description="Simulated quantum control stack")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--format", choices=("json", "csv"), help="restrict report format")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("compile", help="compile a pulse program to instruction streams")
    sp.add_argument("program")
    common(sp)
    sp.set_defaults(func=cmd_compile)

    sp = sub.add_parser("run", help="compile and execute a program, recording traces")
    sp.add_argument("program")
    sp.add_argument("--ticks", type=int, help="ticks to run (default: program length)")
    sp.add_argument("--channels", type=int, nargs="+", help="channels to record")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="reference-vs-fixed verification matrix")
    common(sp)
    sp.add_argument("--fault", default="none", help="inject a fault: harmonic | sign_flip | latency")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("scan", help="run a Rabi scan and fit it")
    sp.add_argument("spec")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed", type=int, help="override the seed in the scan file")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("report", help="summarize JSON reports in a directory")
    sp.add_argument("directory")
    sp.add_argument("--out", help="where to write report.csv")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PulseLangError as exc:
        _err(f"parse error: {exc}")
        return EXIT_PARSE
    except ScheduleError as exc:
        _err(f"schedule error: {exc}")
        return EXIT_SCHEDULE
    except EngineError as exc:
        _err(f"engine error: {exc}")
        return EXIT_SCHEDULE
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
