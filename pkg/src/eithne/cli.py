"""Command-line entry point: ``eithne run | probe | report | list-devices``.

Exit codes: 0 success, 1 verification failure, 2 configuration or input
error (nothing is spawned), 3 transport or device failure.

Configuration is one JSON object::

    {
      "devices": [
        {"name": "sim", "transport": "in-process", "cores": 8,
         "mem_budget_bytes": 32768, "clock_mhz": 100,
         "power": {"idle_w": 2.05, "load_w": 2.19}},
        {"preset": "paper-128k"},
        {"name": "board", "transport": "tcp", "address": "10.0.0.2", "port_base": 47100,
         "cores": 16, "mem_budget_bytes": 32768, "clock_mhz": 600}
      ],
      "benchmarks": [
        {"name": "linpack", "params": {"n": 20, "lda": 20, "seed": 1325, "repetitions": 5}},
        {"name": "fft", "params": {"log2n": 8, "seed": 1, "repetitions": 5}},
        {"name": "dft", "params": {"n": 256}}
      ],
      "output": {"path": "eithne-results", "formats": ["csv", "json"]}
    }

A ``tcp`` device without an ``address`` is simulated locally over loopback
sockets; with one, the host connects to an ``eithne-device`` process.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional

from eithne import metrics
from eithne.device_runtime import (
    DEFAULT_PORT_BASE,
    EPIPHANY_SCRATCHPAD,
    SOFTCORE_FFT_SCRATCHPAD,
    check_budget,
)
from eithne.errors import ConfigError, EithneError, InvalidRecordError, InvalidSizeError, MemoryBudgetError
from eithne.host import HostSession
from eithne import programs
from eithne.suite import connect, program_for, run_suite

log = logging.getLogger("eithne")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3

PRESETS: dict[str, dict[str, Any]] = {
    "sim-8x32k": {"transport": "in-process", "cores": 8, "mem_budget_bytes": EPIPHANY_SCRATCHPAD, "clock_mhz": 100},
    "paper-128k": {"transport": "in-process", "cores": 4, "mem_budget_bytes": SOFTCORE_FFT_SCRATCHPAD, "clock_mhz": 100},
    "epiphany-16x32k": {"transport": "in-process", "cores": 16, "mem_budget_bytes": EPIPHANY_SCRATCHPAD, "clock_mhz": 600},
}

DEFAULT_CONFIG: dict[str, Any] = {
    "devices": [{"preset": "sim-8x32k"}],
    "benchmarks": [
        {"name": "linpack", "params": {"n": 20}},
        {"name": "fft", "params": {"log2n": 8}},
    ],
    "output": {"path": "eithne-results", "formats": ["csv", "json"]},
}

BENCHMARKS = ("linpack", "dft", "fft")
DEFAULT_REPETITIONS = 5
FORMATS = ("csv", "json")


# -- configuration ---------------------------------------------------------------


def _need(obj: dict, key: str, kind, where: str, default=None, required: bool = False):
    if key not in obj:
        if required:
            raise ConfigError(f"{where}: missing field {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) and kind is not bool or not isinstance(v, kind):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', 'number')}, got {v!r}")
    return v


def _normalise_device(d: Any, i: int) -> dict[str, Any]:
    where = f"devices[{i}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    d = dict(d)
    if "preset" in d:
        name = d.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"{where}.preset: unknown preset {name!r} (known: {', '.join(PRESETS)})")
        d = {**PRESETS[name], "name": name, **d}
    out = {
        "name": _need(d, "name", str, where, required=True),
        "transport": _need(d, "transport", str, where, "in-process"),
        "cores": _need(d, "cores", int, where, required=True),
        "mem_budget_bytes": _need(d, "mem_budget_bytes", int, where, required=True),
        "clock_mhz": _need(d, "clock_mhz", (int, float), where, required=True),
        "kernel_cost_bytes": _need(d, "kernel_cost_bytes", int, where, 0),
        "replicate": _need(d, "replicate", bool, where, False),
    }
    if out["transport"] not in ("in-process", "tcp"):
        raise ConfigError(f"{where}.transport: expected 'in-process' or 'tcp', got {out['transport']!r}")
    if out["cores"] < 1:
        raise ConfigError(f"{where}.cores: must be >= 1")
    if out["mem_budget_bytes"] < 1 or out["clock_mhz"] <= 0:
        raise ConfigError(f"{where}: mem_budget_bytes and clock_mhz must be positive")
    if "address" in d:
        out["address"] = _need(d, "address", str, where)
        out["port_base"] = _need(d, "port_base", int, where, int(os.environ.get("EITHNE_PORT_BASE", DEFAULT_PORT_BASE)))
    if "power" in d:
        p = _need(d, "power", dict, where)
        try:
            rec = metrics.PowerRecord(
                out["name"],
                float(_need(p, "idle_w", (int, float), where + ".power", required=True)),
                float(_need(p, "load_w", (int, float), where + ".power", required=True)),
            )
        except InvalidRecordError as exc:
            raise ConfigError(f"{where}.power: {exc}") from None
        out["power"] = {"idle_w": rec.idle_w, "load_w": rec.load_w}
    return out


def _normalise_benchmark(b: Any, i: int) -> dict[str, Any]:
    where = f"benchmarks[{i}]"
    if not isinstance(b, dict):
        raise ConfigError(f"{where}: expected an object")
    name = _need(b, "name", str, where, required=True)
    if name not in BENCHMARKS:
        raise ConfigError(f"{where}.name: unknown benchmark {name!r} (known: {', '.join(BENCHMARKS)})")
    p = _need(b, "params", dict, where, {})
    w = where + ".params"
    params: dict[str, Any] = {"repetitions": _need(p, "repetitions", int, w, DEFAULT_REPETITIONS)}
    if params["repetitions"] < 1:
        raise ConfigError(f"{w}.repetitions: must be >= 1")
    if name == "linpack":
        n = _need(p, "n", int, w, 20)
        lda = _need(p, "lda", int, w, n)
        if n < 1 or lda < n:
            raise ConfigError(f"{w}: need n >= 1 and lda >= n")
        params.update(n=n, lda=lda, seed=_need(p, "seed", int, w, 1325))
    else:
        if "log2n" in p:
            log2n = _need(p, "log2n", int, w)
        else:
            n = _need(p, "n", int, w, 256)
            if n < 1 or n & (n - 1):
                raise ConfigError(f"{w}.n: {n} is not a power of two")
            log2n = n.bit_length() - 1
        if not 0 <= log2n <= 24:
            raise ConfigError(f"{w}.log2n: {log2n} out of range 0..24")
        params.update(log2n=log2n, seed=_need(p, "seed", int, w, 1))
    return {"name": name, "params": params}


def normalise_config(raw: Any) -> dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    devices = _need(raw, "devices", list, "config", required=True)
    benches = _need(raw, "benchmarks", list, "config", required=True)
    if not devices:
        raise ConfigError("config.devices: at least one device is required")
    if not benches:
        raise ConfigError("config.benchmarks: at least one benchmark is required")
    cfg = {
        "devices": [_normalise_device(d, i) for i, d in enumerate(devices)],
        "benchmarks": [_normalise_benchmark(b, i) for i, b in enumerate(benches)],
    }
    names = [d["name"] for d in cfg["devices"]]
    if len(set(names)) != len(names):
        raise ConfigError("config.devices: device names must be unique")
    out = _need(raw, "output", dict, "config", {})
    formats = _need(out, "formats", list, "config.output", list(FORMATS))
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"config.output.formats: unknown format {f!r}")
    cfg["output"] = {"path": _need(out, "path", str, "config.output", "eithne-results"), "formats": formats}
    cfg["timeout_s"] = float(_need(raw, "timeout_s", (int, float), "config", 60.0))
    return cfg


def load_config(path: Optional[str]) -> dict[str, Any]:
    if path is None:
        return normalise_config(copy.deepcopy(DEFAULT_CONFIG))
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return normalise_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def validate_budgets(cfg: dict[str, Any]) -> None:
    """Every benchmark must fit every device it will run on."""
    problems = []
    for d in cfg["devices"]:
        for b in cfg["benchmarks"]:
            program = program_for(b, d["kernel_cost_bytes"])
            try:
                check_budget(program.registrations, d["mem_budget_bytes"], program.kernel_cost_bytes)
            except MemoryBudgetError as exc:
                problems.append(f"{d['name']}/{b['name']}: {exc}")
    if problems:
        raise ConfigError("memory budget exceeded:\n  " + "\n  ".join(problems))


def pick_device(cfg: dict[str, Any], name: Optional[str]) -> dict[str, Any]:
    if name is None:
        return cfg["devices"][0]
    for d in cfg["devices"]:
        if d["name"] == name:
            return d
    if name in PRESETS:
        return _normalise_device({"preset": name}, 0)
    raise ConfigError(f"unknown device {name!r}")


# -- output helpers --------------------------------------------------------------

TIMING_COLUMNS = [
    "device", "benchmark", "core_id", "repetition", "elapsed_s", "sgefa_s", "sgesl_s", "forward_s",
    "inverse_s", "mflops_sgefa", "mflops", "info", "max_error", "roundtrip_error", "verified",
]


def _rows_csv(columns: list[str], rows: list[dict]) -> str:
    return metrics._csv(columns, rows)


def _rows_json(columns: list[str], rows: list[dict]) -> str:
    return json.dumps(metrics._json_rows(columns, rows), indent=2) + "\n"


def _write(outdir: Path, files: dict[str, str]) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (outdir / name).write_text(text, newline="")


def _parse_formats(s: Optional[str], default: list[str]) -> list[str]:
    if s is None:
        return list(default)
    formats = [f.strip() for f in s.split(",") if f.strip()]
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"--format: unknown format {f!r}")
    return formats


def _parse_sizes(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--size: expected comma-separated byte counts, got {s!r}") from None


# -- commands --------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.device:
        cfg["devices"] = [pick_device(cfg, args.device)]
    if args.benchmark:
        cfg["benchmarks"] = [b for b in cfg["benchmarks"] if b["name"] == args.benchmark]
        if not cfg["benchmarks"]:
            raise ConfigError(f"benchmark {args.benchmark!r} is not in the configuration")
    if args.repeat is not None:
        if args.repeat < 1:
            raise ConfigError("--repeat must be >= 1")
        for b in cfg["benchmarks"]:
            b["params"]["repetitions"] = args.repeat
    if args.replicate:
        for d in cfg["devices"]:
            d["replicate"] = True
    formats = _parse_formats(args.format, cfg["output"]["formats"])
    outdir = Path(args.output or cfg["output"]["path"])
    code_sizes = _load_code_sizes(args.code_sizes) if args.code_sizes else []
    validate_budgets(cfg)

    suite = run_suite(cfg)

    report = metrics.build_report(suite.results, suite.power, suite.specs, code_sizes)
    files = metrics.render(report, formats)
    if "csv" in formats:
        files["timings.csv"] = _rows_csv(TIMING_COLUMNS, suite.rows)
    if "json" in formats:
        files["timings.json"] = _rows_json(TIMING_COLUMNS, suite.rows)
        files["results.json"] = json.dumps(_results_doc(suite), indent=2) + "\n"
    _write(outdir, files)

    for r in suite.results:
        status = "ok" if r.verified else "FAILED"
        print(f"{r.device:16s} {r.benchmark:8s} median {r.elapsed_s * 1e3:10.4f} ms  verify {status}")
    print(f"wrote {', '.join(sorted(files))} to {outdir}")
    if not suite.ok:
        for f in suite.failures:
            print(f"verification failed: {f['device']}/{f['benchmark']} core {f['core_id']} rep {f['repetition']}"
                  f" max_error={f.get('max_error')}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _results_doc(suite) -> dict:
    """Run results in the ``report`` input schema."""
    return {
        "results": [
            {k: v for k, v in (("device", r.device), ("benchmark", r.benchmark),
                               ("elapsed_s", metrics.fmt_number(r.elapsed_s)),
                               ("ops", metrics.fmt_number(r.ops)), ("verified", r.verified)) if v is not None}
            for r in suite.results
        ],
        "power": [{"device": p.device, "idle_w": p.idle_w, "load_w": p.load_w} for p in suite.power],
        "devices": [{"device": s.device, "cores": s.cores, "clock_mhz": s.clock_mhz} for s in suite.specs],
    }


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    dev = pick_device(cfg, args.device)
    formats = _parse_formats(args.format, cfg["output"]["formats"])
    sizes = _parse_sizes(args.size) if args.size else [1024, 4096, 16384]
    if args.bandwidth:
        for s in sizes:
            if s <= 0 or s % 4:
                raise ConfigError(f"--size: {s} B is not a positive multiple of 4")
    outdir = Path(args.output or cfg["output"]["path"])
    reps = args.repeat or (1000 if args.latency else 5)

    conn = connect(dev, [0])
    try:
        session = HostSession(conn.endpoints, programs.make_noop_program(), timeout=cfg["timeout_s"])
        session.connect()
        rows = []
        if args.latency:
            st = session.probe_latency(0, reps)
            rows.append({"device": dev["name"], "probe": "latency", "repetitions": len(st.samples),
                         "min_us": st.min_s * 1e6, "median_us": st.median_s * 1e6, "mean_us": st.mean_s * 1e6,
                         "complete": st.complete})
            print(f"{dev['name']}: latency over {len(st.samples)} round trips: min {st.min_s * 1e6:.2f} us, "
                  f"median {st.median_s * 1e6:.2f} us, mean {st.mean_s * 1e6:.2f} us")
        else:
            print(f"{'size_bytes':>12s} {'elapsed_us':>12s} {'MB/s':>10s}")
            for b in session.probe_bandwidth(0, sizes, reps):
                rows.append({"device": dev["name"], "probe": "bandwidth", "repetitions": reps,
                             "size_bytes": b.size_bytes, "elapsed_us": b.elapsed_s * 1e6, "mb_per_s": b.mb_per_s})
                print(f"{b.size_bytes:12d} {b.elapsed_s * 1e6:12.2f} {b.mb_per_s:10.2f}")
    finally:
        conn.close()
    cols = (["device", "probe", "repetitions", "min_us", "median_us", "mean_us", "complete"] if args.latency
            else ["device", "probe", "repetitions", "size_bytes", "elapsed_us", "mb_per_s"])
    files = {}
    if "csv" in formats:
        files["probe.csv"] = _rows_csv(cols, rows)
    if "json" in formats:
        files["probe.json"] = _rows_json(cols, rows)
    _write(outdir, files)
    return EXIT_OK


def _load_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _load_code_sizes(path: str) -> list[metrics.CodeSizeRecord]:
    try:
        return metrics.parse_code_sizes(_load_json(path))
    except InvalidRecordError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_report(args) -> int:
    inputs = list(args.inputs)
    if args.paper:
        inputs.insert(0, str(metrics.paper_fixture_path()))
    if not inputs:
        raise ConfigError("report needs at least one input file (or --paper)")
    results, power, specs, sizes = [], [], [], []
    for path in inputs:
        try:
            r, p, s, c = metrics.parse_inputs(_load_json(path))
        except InvalidRecordError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        results += r
        power += p
        specs += s
        sizes += c
    if args.code_sizes:
        sizes += _load_code_sizes(args.code_sizes)
    try:
        report = metrics.build_report(results, power, specs, sizes, baseline=args.baseline)
    except (InvalidRecordError, EithneError) as exc:
        raise ConfigError(str(exc)) from None
    files = metrics.render(report, _parse_formats(args.format, list(FORMATS)))
    outdir = Path(args.output or "eithne-report")
    _write(outdir, files)
    for row in report.metrics:
        print(f"{row['device']:16s} {row['benchmark']:8s} speedup {metrics.fmt_number(row['speedup_vs_baseline'])}"
              f"  energy {metrics.fmt_number(row['energy_j'])} J")
    for row in report.code_density:
        print(f"{row['device']:16s} {row['kernel']:8s} {row['size_bytes']:8d} B")
    print(f"wrote {', '.join(sorted(files))} to {outdir}")
    return EXIT_OK


def cmd_list_devices(args) -> int:
    cfg = load_config(args.config)
    seen = set()
    print(f"{'name':18s} {'transport':10s} {'cores':>5s} {'budget_B':>9s} {'MHz':>6s}")
    for d in cfg["devices"] + [_normalise_device({"preset": p}, 0) for p in PRESETS]:
        if d["name"] in seen:
            continue
        seen.add(d["name"])
        print(f"{d['name']:18s} {d['transport']:10s} {d['cores']:5d} {d['mem_budget_bytes']:9d} {d['clock_mhz']:6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eithne", description="Benchmark simulated micro-core devices.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--config", help="JSON run configuration (default: built-in)")
        if output:
            p.add_argument("--output", help="output directory")
            p.add_argument("--format", help="comma-separated: csv,json")

    p = sub.add_parser("run", help="run the benchmark suite")
    common(p)
    p.add_argument("--device")
    p.add_argument("--benchmark", choices=BENCHMARKS)
    p.add_argument("--repeat", type=int)
    p.add_argument("--replicate", action="store_true", help="run on every core concurrently")
    p.add_argument("--code-sizes", help="JSON kernel sizes to include in the report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("probe", help="measure link latency or bandwidth")
    common(p)
    p.add_argument("--device")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--latency", action="store_true")
    g.add_argument("--bandwidth", action="store_true")
    p.add_argument("--size", help="comma-separated byte counts for --bandwidth")
    p.add_argument("--repeat", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="derive metrics from timing/power/code-size inputs")
    p.add_argument("inputs", nargs="*", help="JSON input documents")
    p.add_argument("--paper", action="store_true", help="include the shipped DFT/FFT timing and power tables")
    p.add_argument("--code-sizes")
    p.add_argument("--baseline", help="device the ratios are relative to (default: slowest)")
    p.add_argument("--output")
    p.add_argument("--format")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("list-devices", help="show configured and preset devices")
    common(p, output=False)
    p.set_defaults(func=cmd_list_devices)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EithneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
