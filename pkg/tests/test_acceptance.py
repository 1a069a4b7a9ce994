"""Acceptance suite: one test and one summary line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
PASS/FAIL for each criterion along with its wall time.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from acceptance_log import LINES
from eithne import bench_fourier as bf
from eithne import bench_linpack as bl
from eithne import cli, programs, suite
from eithne import metrics as mx
from eithne.device_runtime import (
    DeviceCore,
    SimulatedDevice,
    check_budget,
    in_process_factory,
    spawn_device,
    tcp_factory,
)
from eithne.errors import DeviceBudgetError, MemoryBudgetError
from eithne.host import HostSession
from eithne.registry import Program, Registration, VarKind
from eithne.wire import (
    DATA_TYPES,
    ElementType,
    LoopbackEndpoint,
    Message,
    MsgType,
    RecordingEndpoint,
    decode_message,
    decode_stream,
    encode_message,
    timed_window_violations,
)
from oracles import cplx, dft_oracle, plu_oracle

pytestmark = pytest.mark.acceptance

KIB = 1024


def record(n, title, ok, elapsed=None, limit=None, detail=""):
    timing = ""
    if elapsed is not None:
        timing = f" ({elapsed:.2f} s" + (f", limit {limit:g} s)" if limit is not None else ")")
    line = f"criterion {n} {title}: {'PASS' if ok else 'FAIL'}{timing}"
    if detail:
        line += f" {detail}"
    LINES[n] = line
    print(line)
    return ok


# -- 1 -----------------------------------------------------------------------------


def random_message(rng):
    mtype = MsgType(int(rng.choice([int(t) for t in MsgType])))
    target, obj = (int(v) for v in rng.integers(0, 0x10000, 2))
    if mtype in DATA_TYPES:
        count = int(rng.integers(0, 300))
        etype = ElementType(int(rng.integers(1, 3))) if count or rng.random() < 0.5 else None
        payload = rng.bytes(4 * count)
        return Message(mtype, target, obj, etype, count, payload)
    err = int(rng.integers(1, 0x10000)) if mtype is MsgType.ERROR else 0
    return Message(mtype, target, obj, error_code=err)


def test_criterion_1_protocol_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240501)
    bad = 0
    frames = []
    for _ in range(1000):
        m = random_message(rng)
        raw = encode_message(m)
        back, used = decode_message(raw)
        if back != m or used != len(raw) or encode_message(back) != raw:
            bad += 1
        frames.append((m, raw))
    triple = [frames[i] for i in rng.choice(len(frames), 3, replace=False)]
    stream = b"".join(raw for _, raw in triple)
    concat_ok = decode_stream(stream) == [m for m, _ in triple]
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and concat_ok and elapsed < 5
    record(1, "protocol soundness", ok, elapsed, 5, f"roundtrip_failures={bad} concat={'ok' if concat_ok else 'FAIL'}")
    assert ok


# -- 2 -----------------------------------------------------------------------------


def linpack_via_framework(s, n=20, seed=1325):
    prob = bl.matgen(n, n, seed)
    v = s.vars
    v.set_array(bl.A, prob.a)
    v.set_array(bl.B, prob.b)
    v.set_scalar(bl.JOB, 0)
    s.send_var(0, bl.A)
    s.execute_kernel(0, bl.SGEFA)
    for var in (bl.A, bl.IPVT, bl.INFO):
        s.recv_var(0, var)
    out = {"a": v.array(bl.A).tobytes(), "ipvt": v.array(bl.IPVT).tobytes(), "info": v.get_scalar(bl.INFO)}
    s.send_var(0, bl.B)
    s.send_var(0, bl.JOB)
    s.execute_kernel(0, bl.SGESL)
    s.recv_var(0, bl.B)
    out["b"] = v.array(bl.B).tobytes()
    return out


def linpack_direct(n=20, seed=1325):
    p = bl.solve_local(bl.matgen(n, n, seed))
    factored = bl.matgen(n, n, seed)
    ipvt = np.zeros(n, np.int32)
    info = bl.sgefa(factored.a, n, n, ipvt)
    return {"a": factored.a.tobytes(), "ipvt": ipvt.tobytes(), "info": info, "b": p.b.tobytes()}


def fourier_via_framework(s, log2n=8, seed=1):
    sig = bf.make_test_signal(1 << log2n, seed)
    v = s.vars
    v.set_array(bf.SIG, sig)
    v.set_scalar(bf.STRIDE, 1)
    v.set_scalar(bf.INV, 0)
    v.set_scalar(bf.LOG2N, log2n)
    for var in (bf.SIG, bf.STRIDE, bf.INV, bf.LOG2N):
        s.send_var(0, var)
    s.execute_kernel(0, bf.FFT)
    s.recv_var(0, bf.F)
    fwd = v.array(bf.F).copy()
    v.set_array(bf.SIG, fwd)
    v.set_scalar(bf.INV, 1)
    s.send_var(0, bf.SIG)
    s.send_var(0, bf.INV)
    s.execute_kernel(0, bf.FFT)
    s.recv_var(0, bf.F)
    return {"forward": fwd.tobytes(), "inverse": v.array(bf.F).tobytes()}


def fourier_direct(log2n=8, seed=1):
    sig = bf.make_test_signal(1 << log2n, seed)
    fwd = bf.fft_forward(sig)
    return {"forward": fwd.tobytes(), "inverse": bf.fft_forward(fwd, inverse=True).tobytes()}


def test_criterion_2_framework_equivalence():
    t0 = time.perf_counter()
    want_lp, want_ft = linpack_direct(), fourier_direct()
    mismatches = []
    for label, factory in (("in-process", in_process_factory), ("tcp", tcp_factory)):
        with spawn_device(SimulatedDevice(label, 1), factory, loader=programs.load_program) as h:
            s = HostSession(h.host_endpoints, bl.make_program(20), timeout=30)
            s.connect([0])
            got = linpack_via_framework(s)
            mismatches += [f"{label}:linpack.{k}" for k in want_lp if got[k] != want_lp[k]]
            s = HostSession(h.host_endpoints, bf.make_program(8), timeout=30)
            s.connect([0])
            got = fourier_via_framework(s)
            mismatches += [f"{label}:fft.{k}" for k in want_ft if got[k] != want_ft[k]]
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 30
    record(2, "framework equivalence", ok, elapsed, 30, "mismatches=" + (",".join(mismatches) or "none"))
    assert ok


# -- 3 -----------------------------------------------------------------------------


def test_criterion_3_linpack_correctness():
    t0 = time.perf_counter()
    p = bl.solve_local(bl.matgen(20, 20, 1325))
    _, xerr = bl.residual_check(p)
    worst = 0.0
    for seed in range(1, 21):
        q = bl.matgen(20, 20, seed * 7919)
        a0 = bl._cols(q.a_orig, 20, 20)[:20, :20].astype(np.float64)
        bl.sgefa(q.a, 20, 20, q.ipvt)
        worst = max(worst, float(np.max(np.abs(plu_oracle(q.a, 20, 20, q.ipvt) - a0))))
    elapsed = time.perf_counter() - t0
    ok = p.info == 0 and xerr <= 1e-4 and worst <= 1e-4 and elapsed < 10
    record(3, "linpack correctness", ok, elapsed, 10, f"info={p.info} max|x-1|={xerr:.3g} plu_max_abs={worst:.3g}")
    assert ok


# -- 4 -----------------------------------------------------------------------------


def test_criterion_4_fourier_correctness():
    t0 = time.perf_counter()
    fwd_err = rt_err = par_err = 0.0
    for log2n in range(0, 11):
        n = 1 << log2n
        for seed in range(1, 11):
            x = bf.make_test_signal(n, seed)
            f = bf.fft_forward(x)
            fwd_err = max(fwd_err, float(np.max(np.abs(cplx(f) - dft_oracle(cplx(x))))))
            rt_err = max(rt_err, float(np.max(np.abs(bf.fft_roundtrip(x) - x))))
            e_t = float(np.sum(np.abs(cplx(x)) ** 2))
            e_f = float(np.sum(np.abs(cplx(f)) ** 2)) / n
            par_err = max(par_err, abs(e_f - e_t) / e_t)
    elapsed = time.perf_counter() - t0
    ok = fwd_err <= 1e-4 and rt_err <= 1e-4 and par_err <= 1e-3 and elapsed < 60
    record(4, "fourier correctness", ok, elapsed, 60,
           f"fft_vs_dft={fwd_err:.3g} roundtrip={rt_err:.3g} parseval_rel={par_err:.3g}")
    assert ok


# -- 5 -----------------------------------------------------------------------------

# (label, quoted figure)
QUOTED = {
    "speedup_fft_e3": 653,
    "speedup_dft_mbfpu": 13.7,
    "clock_norm_speedup_fft_e3": 109,
    "energy_ratio_fft_e3": 328,
    "energy_ratio_fft_mbfpu": 12,
    "w_per_core_e3_600mhz": 0.27,
    "w_per_core_e3_at_100mhz": 0.045,
    "power_ratio_pico_over_mbfpu": 0.86,
}


def test_criterion_5_published_arithmetic():
    t0 = time.perf_counter()
    results, power, specs, sizes = mx.parse_inputs(mx.load_paper_fixture())
    rep = mx.build_report(results, power, specs, sizes)
    e3 = rep.row("Epiphany-III", "fft")
    load = {p.device: p.load_w for p in power}
    computed = {
        "speedup_fft_e3": e3["speedup_vs_baseline"],
        "speedup_dft_mbfpu": rep.row("MicroBlaze+FPU", "dft")["speedup_vs_baseline"],
        "clock_norm_speedup_fft_e3": e3["clock_normalized_speedup_vs_baseline"],
        "energy_ratio_fft_e3": e3["energy_ratio_baseline_over_device"],
        "energy_ratio_fft_mbfpu": rep.row("MicroBlaze+FPU", "fft")["energy_ratio_baseline_over_device"],
        "w_per_core_e3_600mhz": e3["watts_per_core"],
        "w_per_core_e3_at_100mhz": e3["watts_per_core_at_ref_clock"],
        "power_ratio_pico_over_mbfpu": load["PicoRV32"] / load["MicroBlaze+FPU"],
    }
    elapsed = time.perf_counter() - t0
    subs, ok = [], elapsed < 1
    for key, quoted in QUOTED.items():
        dev = abs(computed[key] - quoted) / quoted
        good = dev <= 0.005
        ok &= good
        subs.append(f"{key}={computed[key]:.4g}/{quoted:g}({dev * 100:.2f}%,{'ok' if good else 'FAIL'})")
    record(5, "published arithmetic", ok, elapsed, 1, " ".join(subs))
    assert ok, "\n".join(subs)


# -- 6 -----------------------------------------------------------------------------


def random_registrations(rng):
    regs = []
    for i in range(int(rng.integers(1, 8))):
        kind = VarKind(int(rng.integers(0, 4)))
        length = 1 if kind.is_scalar else int(rng.integers(1, 6000))
        regs.append(Registration(i, f"v{i}", kind, length))
    return regs


def test_criterion_6_memory_budget():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    failures = []
    over = 0
    for trial in range(300):
        budget = int(rng.integers(1, 65)) * KIB
        regs = random_registrations(rng)
        bound = []
        prog = Program("rand", regs, ["k"], lambda t: bound.append(t) or [lambda: None])
        core = DeviceCore(0, LoopbackEndpoint(), budget)
        core.init(bl.make_program(4))
        before = (core.vars, core.kernels, core.program, core.used_bytes)
        if prog.data_bytes() > budget:
            over += 1
            try:
                core.init(prog)
                failures.append(f"trial {trial} accepted")
            except MemoryBudgetError:
                if (core.vars, core.kernels, core.program, core.used_bytes) != before or bound:
                    failures.append(f"trial {trial} not atomic")
        else:
            core.init(prog)
            if core.used_bytes != prog.data_bytes():
                failures.append(f"trial {trial} wrong usage")

    # the same rejection over the wire leaves the running program in place
    with spawn_device(SimulatedDevice("e3", 1, 32 * KIB), loader=programs.load_program) as h:
        s = HostSession(h.host_endpoints, bl.make_program(20), timeout=10)
        s.connect([0])
        big = HostSession(h.host_endpoints, bf.make_program(13), timeout=10)
        try:
            big.connect([0])
            failures.append("LOAD of 8192-point program accepted on 32 KiB")
        except DeviceBudgetError:
            pass
        if h.cores[0].program.name != "linpack":
            failures.append("LOAD rejection replaced the program")
        s.execute_kernel(0, bl.SGEFA)

    fft_buffers = [
        Registration(bf.SIG, "sig", VarKind.FLOAT_ARRAY, 2 << 13),
        Registration(bf.F, "f", VarKind.FLOAT_ARRAY, 2 << 13),
    ]
    try:
        check_budget(fft_buffers, 32 * KIB)
        failures.append("2^13 buffers accepted on 32 KiB")
    except MemoryBudgetError:
        pass
    used_128k = check_budget(fft_buffers, cli.PRESETS["paper-128k"]["mem_budget_bytes"])

    elapsed = time.perf_counter() - t0
    ok = not failures and over > 50 and elapsed < 1
    record(6, "memory budget", ok, elapsed, 1,
           f"over_budget_trials={over} 2^13@32k=rejected 2^13@128k=accepted({used_128k} B) "
           f"problems={';'.join(failures) or 'none'}")
    assert ok


# -- 7 -----------------------------------------------------------------------------


def test_criterion_7_timed_window_purity():
    recorders = []

    def wrap(ep):
        rec = RecordingEndpoint(ep)
        recorders.append(rec)
        return rec

    t0 = time.perf_counter()
    cfg = cli.load_config(None)
    res = suite.run_suite(cfg, wrap=wrap)
    elapsed = time.perf_counter() - t0
    violations = sum(len(timed_window_violations(r.timeline)) for r in recorders)
    executes = sum(1 for r in recorders for d, m in r.timeline if d == "tx" and m.msg_type is MsgType.EXECUTE)
    expected = sum(2 * b["params"]["repetitions"] for b in cfg["benchmarks"])
    ok = res.ok and violations == 0 and executes == expected
    record(7, "timed-window purity", ok, elapsed, None,
           f"execute_frames={executes}/{expected} violations={violations} suite_ok={res.ok}")
    assert ok


# -- 8 -----------------------------------------------------------------------------


def eithne(*args):
    return subprocess.run([sys.executable, "-m", "eithne", *map(str, args)], capture_output=True, text=True,
                          timeout=300, env=dict(os.environ))


def test_criterion_8_cli_contract(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    problems = []

    r = eithne("run", "--output", tmp_path / "run")
    rows = json.loads((tmp_path / "run" / "timings.json").read_text()) if r.returncode == 0 else []
    if r.returncode != 0 or not rows or not all(row["verified"] for row in rows):
        problems.append(f"default run rc={r.returncode}")

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"devices": [{"preset": "sim-8x32k"}],
                               "benchmarks": [{"name": "fft", "params": {"log2n": 13}}]}))
    r = eithne("run", "--config", bad, "--output", tmp_path / "bad-out")
    if r.returncode != 2 or (tmp_path / "bad-out").exists():
        problems.append(f"invalid config rc={r.returncode}")

    spawned = []
    monkeypatch.setattr(suite, "spawn_device", lambda *a, **k: spawned.append(a))
    rc = cli.main(["run", "--config", str(bad), "--output", str(tmp_path / "bad-out2")])
    if rc != 2 or spawned:
        problems.append(f"in-process invalid config rc={rc} spawned={len(spawned)}")

    for d in ("r1", "r2"):
        if eithne("report", "--paper", "--output", tmp_path / d).returncode != 0:
            problems.append(f"report {d} failed")
    names = sorted(p.name for p in (tmp_path / "r1").iterdir()) if (tmp_path / "r1").exists() else []
    same = bool(names) and all(
        (tmp_path / "r1" / n).read_bytes() == (tmp_path / "r2" / n).read_bytes() for n in names
    )
    if not same:
        problems.append("report output differs between invocations")

    elapsed = time.perf_counter() - t0
    ok = not problems
    record(8, "cli contract", ok, elapsed, None,
           f"run_rows={len(rows)} report_files={','.join(names)} problems={';'.join(problems) or 'none'}")
    assert ok
