"""Derived metrics (energy, speedups, per-core power, MFLOPS/W) and report rendering.

Energy to solution is load power times elapsed time. The dynamic share,
(load - idle) * t, is reported next to it under its own column.

Reports are rendered to CSV and JSON with a fixed column order and every
number printed to 6 significant digits, so identical inputs give
byte-identical documents.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Any, Iterable, Mapping, Optional, Sequence

from eithne.errors import InvalidRecordError, ReportAssemblyError

REFERENCE_CLOCK_MHZ = 100.0


@dataclass(frozen=True)
class PowerRecord:
    device: str
    idle_w: float
    load_w: float

    def __post_init__(self):
        if not (self.idle_w > 0 and self.load_w >= self.idle_w):
            raise InvalidRecordError(
                f"power for {self.device!r}: need load_w >= idle_w > 0, got idle={self.idle_w} load={self.load_w}"
            )


@dataclass(frozen=True)
class DeviceSpec:
    device: str
    cores: int
    clock_mhz: float

    def __post_init__(self):
        if self.cores < 1 or not self.clock_mhz > 0:
            raise InvalidRecordError(f"device {self.device!r}: need cores >= 1 and clock_mhz > 0")


@dataclass(frozen=True)
class CodeSizeRecord:
    device: str
    kernel: str
    size_bytes: int

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise InvalidRecordError(f"code size for {self.device!r}/{self.kernel!r} must be positive")


@dataclass(frozen=True)
class BenchmarkResult:
    device: str
    benchmark: str
    elapsed_s: float
    ops: Optional[float] = None
    verified: Optional[bool] = None


@dataclass(frozen=True)
class EnergyRecord:
    device: str
    benchmark: str
    elapsed_s: float
    energy_j: float
    dynamic_energy_j: float


# -- formulas -----------------------------------------------------------------


def energy(load_w: float, elapsed_s: float) -> float:
    if not load_w > 0:
        raise InvalidRecordError(f"power must be positive, got {load_w}")
    if elapsed_s < 0:
        raise InvalidRecordError(f"elapsed time must be >= 0, got {elapsed_s}")
    return load_w * elapsed_s


def energy_record(result: BenchmarkResult, power: PowerRecord) -> EnergyRecord:
    return EnergyRecord(
        result.device,
        result.benchmark,
        result.elapsed_s,
        energy(power.load_w, result.elapsed_s),
        (power.load_w - power.idle_w) * result.elapsed_s,
    )


def _ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        raise ZeroDivisionError(f"{what}: zero denominator")
    return num / den


def energy_ratio(e_a: float, e_b: float) -> float:
    return _ratio(e_a, e_b, "energy_ratio")


def speedup(t_slow: float, t_fast: float) -> float:
    return _ratio(t_slow, t_fast, "speedup")


def clock_normalized_speedup(t_slow: float, t_fast: float, f_slow_mhz: float, f_fast_mhz: float) -> float:
    """Speedup of the fast device had it run at the slow device's clock,
    assuming performance scales linearly with frequency."""
    if min(t_slow, t_fast, f_slow_mhz, f_fast_mhz) <= 0:
        raise ValueError("clock_normalized_speedup needs positive times and frequencies")
    return (t_slow / t_fast) * (f_slow_mhz / f_fast_mhz)


def watts_per_core(load_w: float, cores: int) -> float:
    if cores < 1:
        raise ValueError("cores must be >= 1")
    return load_w / cores


def scaled_watts_per_core(load_w: float, cores: int, f_mhz: float, f_target_mhz: float) -> float:
    if f_mhz <= 0 or f_target_mhz <= 0:
        raise ValueError("frequencies must be positive")
    return watts_per_core(load_w, cores) * f_target_mhz / f_mhz


def flops_per_watt(mflops: float, load_w: float) -> float:
    """MFLOPS per watt."""
    if not load_w > 0:
        raise InvalidRecordError(f"power must be positive, got {load_w}")
    return mflops / load_w


# -- report -------------------------------------------------------------------

METRIC_COLUMNS = [
    "device",
    "benchmark",
    "elapsed_s",
    "cores",
    "clock_mhz",
    "idle_w",
    "load_w",
    "energy_j",
    "dynamic_energy_j",
    "watts_per_core",
    "watts_per_core_at_ref_clock",
    "ops",
    "mflops",
    "mflops_per_watt",
    "baseline",
    "speedup_vs_baseline",
    "clock_normalized_speedup_vs_baseline",
    "energy_ratio_baseline_over_device",
    "verified",
]

DENSITY_COLUMNS = ["device", "kernel", "size_bytes", "size_kb", "relative_to_smallest"]


@dataclass
class Report:
    metrics: list[dict[str, Any]]
    code_density: list[dict[str, Any]]
    ref_clock_mhz: float = REFERENCE_CLOCK_MHZ

    def row(self, device: str, benchmark: str) -> dict[str, Any]:
        for r in self.metrics:
            if r["device"] == device and r["benchmark"] == benchmark:
                return r
        raise KeyError((device, benchmark))


def _pick_baseline(rows: list[BenchmarkResult], baseline: Optional[str]) -> BenchmarkResult:
    if baseline is not None:
        for r in rows:
            if r.device == baseline:
                return r
    # slowest device: ratios read as "X times faster than" it
    return max(rows, key=lambda r: r.elapsed_s)


def build_report(
    results: Sequence[BenchmarkResult],
    power_records: Sequence[PowerRecord] = (),
    device_specs: Sequence[DeviceSpec] = (),
    code_sizes: Sequence[CodeSizeRecord] = (),
    baseline: Optional[str] = None,
    ref_clock_mhz: float = REFERENCE_CLOCK_MHZ,
) -> Report:
    names = {r.device for r in results}
    unmatched = sorted(
        {p.device for p in power_records if p.device not in names}
        | {s.device for s in device_specs if s.device not in names}
    )
    if unmatched:
        raise ReportAssemblyError(f"no results for device(s): {', '.join(unmatched)}")
    power = {p.device: p for p in power_records}
    specs = {s.device: s for s in device_specs}

    by_bench: dict[str, list[BenchmarkResult]] = {}
    for r in results:
        by_bench.setdefault(r.benchmark, []).append(r)
    bases = {b: _pick_baseline(rows, baseline) for b, rows in by_bench.items()}

    rows = []
    for r in results:
        p, s, base = power.get(r.device), specs.get(r.device), bases[r.benchmark]
        pb, sb = power.get(base.device), specs.get(base.device)
        row: dict[str, Any] = dict.fromkeys(METRIC_COLUMNS)
        row.update(device=r.device, benchmark=r.benchmark, elapsed_s=r.elapsed_s, ops=r.ops, verified=r.verified)
        row["baseline"] = base.device
        if s:
            row.update(cores=s.cores, clock_mhz=s.clock_mhz)
        if p:
            e = energy_record(r, p)
            row.update(idle_w=p.idle_w, load_w=p.load_w, energy_j=e.energy_j, dynamic_energy_j=e.dynamic_energy_j)
            if s:
                row["watts_per_core"] = watts_per_core(p.load_w, s.cores)
                row["watts_per_core_at_ref_clock"] = scaled_watts_per_core(p.load_w, s.cores, s.clock_mhz, ref_clock_mhz)
        if r.ops is not None and r.elapsed_s > 0:
            row["mflops"] = r.ops / (r.elapsed_s * 1e6)
            if p:
                row["mflops_per_watt"] = flops_per_watt(row["mflops"], p.load_w)
        if r.elapsed_s > 0:
            row["speedup_vs_baseline"] = speedup(base.elapsed_s, r.elapsed_s)
            if s and sb:
                row["clock_normalized_speedup_vs_baseline"] = clock_normalized_speedup(
                    base.elapsed_s, r.elapsed_s, sb.clock_mhz, s.clock_mhz
                )
            if p and pb:
                row["energy_ratio_baseline_over_device"] = energy_ratio(
                    energy(pb.load_w, base.elapsed_s), energy(p.load_w, r.elapsed_s)
                )
        rows.append(row)

    density = []
    if code_sizes:
        smallest = min(c.size_bytes for c in code_sizes)
        for c in sorted(code_sizes, key=lambda c: (c.size_bytes, c.device, c.kernel)):
            density.append(
                {
                    "device": c.device,
                    "kernel": c.kernel,
                    "size_bytes": c.size_bytes,
                    "size_kb": c.size_bytes / 1024,
                    "relative_to_smallest": c.size_bytes / smallest,
                }
            )
    return Report(rows, density, ref_clock_mhz)


def fmt_number(x) -> Any:
    """Round to 6 significant digits. Returns str for CSV use via ``str()``."""
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int):
        return x
    if not math.isfinite(x):
        raise InvalidRecordError(f"non-finite value {x}")
    v = float(f"{x:.6g}")
    return int(v) if v.is_integer() and abs(v) < 1e15 else v


def _csv_cell(v) -> str:
    v = fmt_number(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_csv_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_rows(columns: list[str], rows: list[dict]) -> list[dict]:
    return [{c: fmt_number(r.get(c)) for c in columns} for r in rows]


def render_csv(report: Report) -> dict[str, str]:
    return {
        "metrics.csv": _csv(METRIC_COLUMNS, report.metrics),
        "code_density.csv": _csv(DENSITY_COLUMNS, report.code_density),
    }


def render_json(report: Report) -> dict[str, str]:
    doc = {
        "reference_clock_mhz": fmt_number(report.ref_clock_mhz),
        "metrics": _json_rows(METRIC_COLUMNS, report.metrics),
        "code_density": _json_rows(DENSITY_COLUMNS, report.code_density),
    }
    return {"report.json": json.dumps(doc, indent=2) + "\n"}


def render(report: Report, formats: Iterable[str] = ("csv", "json")) -> dict[str, str]:
    out: dict[str, str] = {}
    for f in formats:
        if f == "csv":
            out.update(render_csv(report))
        elif f == "json":
            out.update(render_json(report))
        else:
            raise ValueError(f"unknown report format {f!r}")
    return out


# -- input documents ----------------------------------------------------------


def _field(obj: Mapping, key: str, kind, where: str, required: bool = True):
    if key not in obj:
        if required:
            raise InvalidRecordError(f"{where}: missing field {key!r}")
        return None
    v = obj[key]
    ok = isinstance(v, kind) and not (isinstance(v, bool) and kind is not bool)
    if not ok:
        raise InvalidRecordError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {v!r}")
    return v


NUM = (int, float)


def parse_inputs(doc: Mapping) -> tuple[list[BenchmarkResult], list[PowerRecord], list[DeviceSpec], list[CodeSizeRecord]]:
    """Validate one input document (results/power/devices/code_sizes lists)."""
    if not isinstance(doc, Mapping):
        raise InvalidRecordError("input document must be a JSON object")
    results, power, specs, sizes = [], [], [], []
    for i, r in enumerate(doc.get("results", [])):
        w = f"results[{i}]"
        if not isinstance(r, Mapping):
            raise InvalidRecordError(f"{w}: expected an object")
        results.append(
            BenchmarkResult(
                _field(r, "device", str, w),
                _field(r, "benchmark", str, w),
                float(_field(r, "elapsed_s", NUM, w)),
                _field(r, "ops", NUM, w, required=False),
                _field(r, "verified", bool, w, required=False),
            )
        )
    for i, p in enumerate(doc.get("power", [])):
        w = f"power[{i}]"
        power.append(PowerRecord(_field(p, "device", str, w), float(_field(p, "idle_w", NUM, w)), float(_field(p, "load_w", NUM, w))))
    for i, d in enumerate(doc.get("devices", [])):
        w = f"devices[{i}]"
        specs.append(DeviceSpec(_field(d, "device", str, w), _field(d, "cores", int, w), float(_field(d, "clock_mhz", NUM, w))))
    sizes = parse_code_sizes(doc.get("code_sizes", []))
    return results, power, specs, sizes


def parse_code_sizes(doc, default_kernel: str = "fft") -> list[CodeSizeRecord]:
    """Accept either ``{device: bytes}`` or a list of records."""
    if isinstance(doc, Mapping):
        out = []
        for device, size in doc.items():
            if not isinstance(size, int) or isinstance(size, bool):
                raise InvalidRecordError(f"code_sizes.{device}: expected integer bytes, got {size!r}")
            out.append(CodeSizeRecord(device, default_kernel, size))
        return out
    if not isinstance(doc, list):
        raise InvalidRecordError("code_sizes: expected an object or a list")
    out = []
    for i, c in enumerate(doc):
        w = f"code_sizes[{i}]"
        if not isinstance(c, Mapping):
            raise InvalidRecordError(f"{w}: expected an object")
        out.append(CodeSizeRecord(_field(c, "device", str, w), _field(c, "kernel", str, w), _field(c, "size_bytes", int, w)))
    return out


def paper_fixture_path():
    return resources.files("eithne") / "data" / "tables2-3.json"


def load_paper_fixture() -> dict:
    return json.loads(paper_fixture_path().read_text())
