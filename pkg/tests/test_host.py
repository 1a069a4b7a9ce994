import time

import numpy as np
import pytest

from eithne import bench_linpack as bl
from eithne import programs
from eithne.device_runtime import SimulatedDevice, spawn_device, tcp_factory
from eithne.errors import (
    DeviceBudgetError,
    DeviceError,
    ExecutionError,
    HandshakeError,
    InvalidSizeError,
    ProtocolError,
    TransportTimeoutError,
    UnknownVariableError,
)
from eithne.host import HostSession, LatencyStats
from eithne.registry import Program, Registration, VarKind
from eithne.wire import (
    ElementType,
    Message,
    MsgType,
    RecordingEndpoint,
    data_message,
    recv_message,
    send_message,
    timed_window_violations,
)


@pytest.fixture
def device():
    h = spawn_device(SimulatedDevice("sim", 2, 32 * 1024), loader=programs.load_program)
    yield h
    h.stop()


@pytest.fixture
def session(device):
    s = HostSession(device.host_endpoints, bl.make_program(20), timeout=10)
    s.connect([0])
    return s


def test_send_recv_echo(session):
    data = np.random.default_rng(1).standard_normal(400).astype(np.float32)
    session.vars.set_array(bl.A, data)
    session.send_var(0, bl.A)
    session.vars.set_array(bl.A, np.zeros(400))
    session.recv_var(0, bl.A)
    assert session.vars.array(bl.A).tobytes() == data.tobytes()


def test_send_unregistered_sends_nothing(device):
    rec = RecordingEndpoint(device.host_endpoints[0])
    s = HostSession({0: rec}, bl.make_program(20))
    with pytest.raises(UnknownVariableError):
        s.send_var(0, 77)
    assert rec.timeline == []


def test_int_scalar_reaches_device(session, device):
    session.vars.set_scalar(bl.JOB, 0)
    device.cores[0].vars.set_scalar(bl.JOB, 5)
    session.send_var(0, bl.JOB)
    assert device.cores[0].vars.get_scalar(bl.JOB) == 0


def test_recv_never_written_is_zero(session):
    session.vars.set_array(bl.B, np.ones(20))
    session.recv_var(0, bl.B)
    assert not session.vars.array(bl.B).any()


def test_recv_wrong_length_is_protocol_error():
    host_prog = bl.make_program(20)
    dev_prog = bl.make_program(20, 21)  # A is 420 floats on the device
    with spawn_device(SimulatedDevice("x", 1), program=dev_prog) as h:
        s = HostSession(h.host_endpoints, host_prog)
        with pytest.raises(ProtocolError):
            s.recv_var(0, bl.A)


def test_sgefa_sgesl_at_n20(session):
    p = bl.matgen(20)
    v = session.vars
    v.set_array(bl.A, p.a)
    v.set_array(bl.B, p.b)
    session.send_var(0, bl.A)
    session.execute_kernel(0, bl.SGEFA)
    session.recv_var(0, bl.INFO)
    assert v.get_scalar(bl.INFO) == 0
    session.send_var(0, bl.B)
    session.send_var(0, bl.JOB)
    session.execute_kernel(0, bl.SGESL)
    session.recv_var(0, bl.B)
    assert np.max(np.abs(v.array(bl.B) - 1)) <= 1e-4


def test_noop_kernel_timing_bound(device):
    s = HostSession(device.host_endpoints, programs.make_noop_program())
    s.connect([1])
    lat = s.probe_latency(1, 200)
    t = s.execute_kernel(1, 0)
    assert 0 < t.elapsed_s < max(lat.samples) * 10


def test_unknown_kernel_then_usable(session):
    with pytest.raises(ExecutionError):
        session.execute_kernel(0, 99)
    assert session.execute_kernel(0, bl.SGEFA).elapsed_s > 0


def test_execute_timeout():
    slow = Program("slow", [], ["sleep"], lambda t: [lambda: time.sleep(0.5)])
    with spawn_device(SimulatedDevice("x", 1), program=slow) as h:
        s = HostSession(h.host_endpoints, slow)
        with pytest.raises(TransportTimeoutError):
            s.execute_kernel(0, 0, timeout=0.05)
        time.sleep(0.6)
        recv_message(h.host_endpoints[0], 1.0)  # drain the late EXECUTE_DONE


def test_default_timeout_is_sixty_seconds():
    assert HostSession({}).timeout == 60


def test_timing_window_uses_injected_clock(session):
    ticks = iter([100, 350])
    session.clock = lambda: next(ticks)
    r = session.execute_kernel(0, bl.SGEFA)
    assert (r.t_start, r.t_end) == (100, 350)
    assert r.elapsed_s == pytest.approx(250e-9)


def test_timed_window_has_no_data(device):
    rec = RecordingEndpoint(device.host_endpoints[0])
    s = HostSession({0: rec}, bl.make_program(20))
    s.connect()
    s.vars.set_array(bl.A, bl.matgen(20).a)
    s.send_var(0, bl.A)
    s.execute_kernel(0, bl.SGEFA)
    s.recv_var(0, bl.A)
    assert timed_window_violations(rec.timeline) == []
    assert any(m.msg_type is MsgType.EXECUTE for _, m in rec.timeline)


# -- handshake -------------------------------------------------------------------


def test_handshake_detects_length_drift():
    dev_prog = Program(
        "linpack",
        [r if r.var_id != bl.IPVT else Registration(r.var_id, r.name, r.kind, 19) for r in bl.registrations(20)],
        ["sgefa", "sgesl"],
        lambda t: [lambda: None, lambda: None],
    )
    with spawn_device(SimulatedDevice("x", 1), program=dev_prog) as h:
        s = HostSession(h.host_endpoints, bl.make_program(20))
        with pytest.raises(HandshakeError):
            s.connect(load=False)


def test_handshake_detects_kernel_count():
    dev_prog = Program("linpack", bl.registrations(20), ["sgefa"], lambda t: [lambda: None])
    with spawn_device(SimulatedDevice("x", 1), program=dev_prog) as h:
        s = HostSession(h.host_endpoints, bl.make_program(20))
        with pytest.raises(HandshakeError):
            s.connect(load=False)


def test_load_over_budget_surfaces(device):
    s = HostSession(device.host_endpoints, bl.make_program(100))  # 40 KB matrix
    with pytest.raises(DeviceBudgetError):
        s.connect([0])


# -- probes ----------------------------------------------------------------------


def test_latency_in_process(device):
    s = HostSession(device.host_endpoints)
    st = s.probe_latency(0, 1000)
    assert len(st.samples) == 1000 and st.complete
    assert st.median_s < 1e-3
    assert st.min_s <= st.median_s


def test_latency_single_rep(device):
    st = HostSession(device.host_endpoints).probe_latency(0, 1)
    assert st.min_s == st.median_s == st.mean_s


def test_latency_partial_on_failure(device):
    ep = device.host_endpoints[0]
    s = HostSession({0: ep}, timeout=2)

    calls = {"n": 0}
    real = ep.recv_exactly

    def dying(n, timeout=None):
        calls["n"] += 1
        if calls["n"] > 5:
            ep.close()
        return real(n, timeout)

    ep.recv_exactly = dying
    st = s.probe_latency(0, 50)
    assert not st.complete and st.error
    assert len(st.samples) == 5


def test_latency_stats_from_samples():
    st = LatencyStats.from_samples([3.0, 1.0, 2.0])
    assert (st.min_s, st.median_s, st.mean_s) == (1.0, 2.0, 2.0)


def test_bandwidth_monotonic_and_amortised():
    with spawn_device(SimulatedDevice("big", 1, 4 << 20)) as h:
        s = HostSession(h.host_endpoints)
        rows = s.probe_bandwidth(0, [4096, 65536, 1 << 20], repetitions=7)
    times = [r.elapsed_s for r in rows]
    assert times == sorted(times)
    assert rows[-1].mb_per_s > rows[0].mb_per_s


def test_bandwidth_size_must_be_word_multiple(device):
    with pytest.raises(InvalidSizeError):
        HostSession(device.host_endpoints).probe_bandwidth(0, [6])


def test_bandwidth_over_budget(device):
    s = HostSession(device.host_endpoints)
    with pytest.raises(DeviceBudgetError):
        s.probe_bandwidth(0, [64 * 1024], repetitions=1)
    # session still in step
    assert s.probe_latency(0, 3).complete


def test_tcp_session():
    with spawn_device(SimulatedDevice("t", 1), tcp_factory, loader=programs.load_program) as h:
        s = HostSession(h.host_endpoints, bl.make_program(20))
        s.connect()
        s.vars.set_scalar(bl.JOB, 3)
        s.send_var(0, bl.JOB)
        s.vars.set_scalar(bl.JOB, 0)
        s.recv_var(0, bl.JOB)
        assert s.vars.get_scalar(bl.JOB) == 3


def test_device_error_mid_stream_keeps_sync(session, device):
    # a bad DATA_SEND followed by a confirmed one: the ERROR is reported once
    send_message(device.host_endpoints[0], data_message(MsgType.DATA_SEND, 0, 123, ElementType.INT32, bytes(4)))
    with pytest.raises(DeviceError):
        session.send_var(0, bl.JOB)
    session.send_var(0, bl.JOB)
    send_message(device.host_endpoints[0], Message(MsgType.PING))
    assert recv_message(device.host_endpoints[0], 2).msg_type is MsgType.PONG
