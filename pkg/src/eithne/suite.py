"""Host-side benchmark flows and the device x benchmark x repetition driver."""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from eithne import bench_fourier as bf
from eithne import bench_linpack as bl
from eithne import programs
from eithne.device_runtime import (
    DEFAULT_PORT_BASE,
    DeviceHandle,
    SimulatedDevice,
    in_process_factory,
    spawn_device,
    tcp_factory,
)
from eithne.host import HostSession
from eithne.metrics import BenchmarkResult, DeviceSpec, PowerRecord
from eithne.registry import Program
from eithne.wire import TcpEndpoint, TransportEndpoint

log = logging.getLogger(__name__)

LINPACK_TOLERANCE = 1e-4
FOURIER_TOLERANCE = 1e-4

EndpointWrapper = Callable[[TransportEndpoint], TransportEndpoint]


def fourier_tolerance(n: int) -> float:
    return max(FOURIER_TOLERANCE, 1e-6 * n)


def program_for(bench: dict, kernel_cost_bytes: int = 0) -> Program:
    p = bench["params"]
    if bench["name"] == "linpack":
        return bl.make_program(p["n"], p["lda"], kernel_cost_bytes)
    return bf.make_program(p["log2n"], kernel_cost_bytes)


# -- single-repetition flows -----------------------------------------------------


def run_linpack(s: HostSession, core_id: int, n: int, lda: int, seed: int) -> dict[str, Any]:
    """matgen -> SGEFA -> SGESL on the device, verified against x = 1 and
    against the same kernels run in-process."""
    prob = bl.matgen(n, lda, seed)
    v = s.vars
    v.set_array(bl.A, prob.a)
    v.set_array(bl.B, prob.b)
    v.set_scalar(bl.JOB, 0)

    s.send_var(core_id, bl.A)
    t_fa = s.execute_kernel(core_id, bl.SGEFA)
    s.recv_var(core_id, bl.A)
    s.recv_var(core_id, bl.IPVT)
    s.recv_var(core_id, bl.INFO)
    info = v.get_scalar(bl.INFO)

    s.send_var(core_id, bl.B)
    s.send_var(core_id, bl.JOB)
    t_sl = s.execute_kernel(core_id, bl.SGESL)
    s.recv_var(core_id, bl.B)

    prob.b[:] = v.array(bl.B)
    resid, xerr = bl.residual_check(prob)
    local = bl.solve_local(bl.matgen(n, lda, seed))
    equivalent = (
        local.info == info
        and np.array_equal(local.ipvt, v.array(bl.IPVT))
        and local.b.tobytes() == v.array(bl.B).tobytes()
    )
    ops = bl.linpack_ops(n)
    return {
        "info": info,
        "sgefa_s": t_fa.elapsed_s,
        "sgesl_s": t_sl.elapsed_s,
        "elapsed_s": t_fa.elapsed_s + t_sl.elapsed_s,
        "ops": ops,
        "mflops_sgefa": bl.mflops(ops, t_fa.elapsed_s),
        "mflops": bl.mflops(ops, t_fa.elapsed_s + t_sl.elapsed_s),
        "residual": resid,
        "max_error": xerr,
        "framework_equivalent": equivalent,
        "verified": bool(info == 0 and xerr <= LINPACK_TOLERANCE and equivalent),
    }


def run_fourier(s: HostSession, core_id: int, kernel_id: int, log2n: int, seed: int) -> dict[str, Any]:
    """Forward then inverse transform on the device; the host scales by 1/n.
    Verified against a double-precision transform and by the roundtrip."""
    n = 1 << log2n
    sig = bf.make_test_signal(n, seed)
    v = s.vars
    v.set_array(bf.SIG, sig)
    v.set_scalar(bf.STRIDE, 1)
    v.set_scalar(bf.INV, 0)
    v.set_scalar(bf.LOG2N, log2n)
    for var in (bf.SIG, bf.STRIDE, bf.INV, bf.LOG2N):
        s.send_var(core_id, var)
    t_fwd = s.execute_kernel(core_id, kernel_id)
    s.recv_var(core_id, bf.F)
    forward = v.array(bf.F).reshape(-1, 2).copy()

    v.set_array(bf.SIG, forward)
    v.set_scalar(bf.INV, 1)
    s.send_var(core_id, bf.SIG)
    s.send_var(core_id, bf.INV)
    t_inv = s.execute_kernel(core_id, kernel_id)
    s.recv_var(core_id, bf.F)
    back = v.array(bf.F).reshape(-1, 2) * np.float32(1.0 / n)

    ref = np.fft.fft(bf.to_complex(sig))
    fwd_err = float(np.max(np.abs(bf.to_complex(forward) - ref)))
    rt_err = float(np.max(np.abs(bf.to_complex(back) - bf.to_complex(sig))))
    return {
        "forward_s": t_fwd.elapsed_s,
        "inverse_s": t_inv.elapsed_s,
        "elapsed_s": t_fwd.elapsed_s + t_inv.elapsed_s,
        "ops": None,
        "max_error": fwd_err,
        "roundtrip_error": rt_err,
        "verified": bool(fwd_err <= fourier_tolerance(n) and rt_err <= FOURIER_TOLERANCE),
    }


def run_once(s: HostSession, core_id: int, bench: dict) -> dict[str, Any]:
    p = bench["params"]
    if bench["name"] == "linpack":
        return run_linpack(s, core_id, p["n"], p["lda"], p["seed"])
    kernel = bf.FFT if bench["name"] == "fft" else bf.DFT
    return run_fourier(s, core_id, kernel, p["log2n"], p["seed"])


# -- device connection ---------------------------------------------------------


@dataclass
class Connection:
    endpoints: dict[int, TransportEndpoint]
    handle: Optional[DeviceHandle] = None

    def close(self) -> None:
        if self.handle is not None:
            self.handle.stop()
        else:
            for ep in self.endpoints.values():
                ep.close()


def sim_device(dev: dict) -> SimulatedDevice:
    return SimulatedDevice(dev["name"], dev["cores"], dev["mem_budget_bytes"], dev["clock_mhz"])


def connect(dev: dict, core_ids: list[int], wrap: Optional[EndpointWrapper] = None) -> Connection:
    """Spawn a simulated device, or attach to a remote device process when the
    device entry names an address."""
    wrap = wrap or (lambda ep: ep)
    if dev["transport"] == "tcp" and dev.get("address"):
        port_base = dev.get("port_base", DEFAULT_PORT_BASE)
        eps = {}
        try:
            for c in core_ids:
                eps[c] = wrap(TcpEndpoint.connect(dev["address"], port_base + c))
        except Exception:
            for ep in eps.values():
                ep.close()
            raise
        return Connection(eps)
    factory = tcp_factory if dev["transport"] == "tcp" else in_process_factory
    handle = spawn_device(sim_device(dev), factory, loader=programs.load_program)
    handle.host_endpoints = {c: wrap(ep) for c, ep in handle.host_endpoints.items()}
    return Connection({c: handle.host_endpoints[c] for c in core_ids}, handle)


# -- suite -----------------------------------------------------------------------


@dataclass
class SuiteResult:
    rows: list[dict[str, Any]] = field(default_factory=list)
    results: list[BenchmarkResult] = field(default_factory=list)
    power: list[PowerRecord] = field(default_factory=list)
    specs: list[DeviceSpec] = field(default_factory=list)

    @property
    def failures(self) -> list[dict[str, Any]]:
        return [r for r in self.rows if not r["verified"]]

    @property
    def ok(self) -> bool:
        return bool(self.rows) and not self.failures


def _summarise(device: str, bench: str, rows: list[dict[str, Any]]) -> BenchmarkResult:
    elapsed = [r["elapsed_s"] for r in rows]
    return BenchmarkResult(
        device,
        bench,
        statistics.median(elapsed),
        rows[0]["ops"],
        all(r["verified"] for r in rows),
    )


def run_suite(config: dict, wrap: Optional[EndpointWrapper] = None) -> SuiteResult:
    """Run every benchmark on every device; ``config`` must already be validated."""
    out = SuiteResult()
    for dev in config["devices"]:
        out.specs.append(DeviceSpec(dev["name"], dev["cores"], dev["clock_mhz"]))
        if dev.get("power"):
            out.power.append(PowerRecord(dev["name"], dev["power"]["idle_w"], dev["power"]["load_w"]))
        core_ids = list(range(dev["cores"])) if dev.get("replicate") else [dev.get("target_core", 0)]
        conn = connect(dev, core_ids, wrap)
        try:
            for bench in config["benchmarks"]:
                program = program_for(bench, dev.get("kernel_cost_bytes", 0))
                sessions = {c: HostSession({c: conn.endpoints[c]}, program, timeout=config.get("timeout_s", 60.0))
                            for c in core_ids}
                for c, s in sessions.items():
                    s.connect()
                reps = bench["params"]["repetitions"]
                bench_rows = []

                def drive(core_id: int) -> list[dict[str, Any]]:
                    rows = []
                    for rep in range(reps):
                        r = run_once(sessions[core_id], core_id, bench)
                        r.update(device=dev["name"], benchmark=bench["name"], core_id=core_id, repetition=rep)
                        rows.append(r)
                    return rows

                if len(core_ids) > 1:
                    with ThreadPoolExecutor(len(core_ids)) as pool:
                        for rows in pool.map(drive, core_ids):
                            bench_rows += rows
                else:
                    bench_rows = drive(core_ids[0])
                log.info("%s/%s: %d runs, %d failed", dev["name"], bench["name"], len(bench_rows),
                         sum(not r["verified"] for r in bench_rows))
                out.rows += bench_rows
                out.results.append(_summarise(dev["name"], bench["name"], bench_rows))
        finally:
            conn.close()
    return out
