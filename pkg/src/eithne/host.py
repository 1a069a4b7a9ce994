"""Host-side orchestration: variable transfers, timed kernel launches and link probes."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from eithne.device_runtime import SCRATCH_VAR_ID
from eithne.errors import (
    DeviceBudgetError,
    DeviceError,
    ExecutionError,
    HandshakeError,
    InvalidSizeError,
    PayloadSizeError,
    ProtocolError,
    TransportError,
)
from eithne.registry import Program, VariableTable, structure_from_signature
from eithne.wire import (
    ElementType,
    ErrorCode,
    Message,
    MsgType,
    TransportEndpoint,
    data_message,
    recv_message,
    send_message,
)

DEFAULT_TIMEOUT_S = 60.0


@dataclass(frozen=True)
class TimingRecord:
    kernel_id: int
    core_id: int
    t_start: int
    t_end: int

    @property
    def elapsed_s(self) -> float:
        return (self.t_end - self.t_start) * 1e-9


@dataclass
class LatencyStats:
    min_s: float
    median_s: float
    mean_s: float
    samples: list[float] = field(repr=False, default_factory=list)
    complete: bool = True
    error: Optional[str] = None

    @classmethod
    def from_samples(cls, samples: list[float], complete: bool = True, error: Optional[str] = None):
        return cls(min(samples), statistics.median(samples), statistics.fmean(samples), samples, complete, error)


@dataclass(frozen=True)
class BandwidthSample:
    size_bytes: int
    elapsed_s: float  # median over repetitions

    @property
    def mb_per_s(self) -> float:
        return self.size_bytes / self.elapsed_s / 1e6


class HostSession:
    """Drives the cores reachable through ``endpoints`` (core_id -> endpoint).

    ``program`` fixes the host's mirror of the device registrations; it may be
    None for sessions that only probe the link.
    """

    def __init__(
        self,
        endpoints: dict[int, TransportEndpoint],
        program: Optional[Program] = None,
        host_id: int = 0,
        timeout: float = DEFAULT_TIMEOUT_S,
        clock: Callable[[], int] = time.perf_counter_ns,
    ):
        self.endpoints = dict(endpoints)
        self.program = program
        self.host_id = host_id
        self.timeout = timeout
        self.clock = clock
        self.vars = VariableTable.from_registrations(program.registrations) if program else VariableTable()

    # -- plumbing -------------------------------------------------------------

    def _ep(self, core_id: int) -> TransportEndpoint:
        try:
            return self.endpoints[core_id]
        except KeyError:
            raise ProtocolError(f"core {core_id} is not connected") from None

    def _send(self, core_id: int, m: Message) -> None:
        send_message(self._ep(core_id), m)

    def _recv(self, core_id: int, expect: MsgType, context: str, timeout: Optional[float] = None) -> Message:
        m = recv_message(self._ep(core_id), self.timeout if timeout is None else timeout)
        if m.msg_type is MsgType.ERROR:
            if m.error_code == ErrorCode.MEMORY_BUDGET:
                raise DeviceBudgetError(m.error_code, m.object_id, context)
            raise DeviceError(m.error_code, m.object_id, context)
        if m.msg_type is not expect:
            raise ProtocolError(f"{context}: expected {expect.name}, got {m.msg_type.name}")
        return m

    def _sync(self, core_id: int, context: str) -> None:
        """PING and wait for the PONG. An ERROR that arrives first is raised
        after its PONG has been drained, leaving the stream in step."""
        self._send(core_id, Message(MsgType.PING, core_id))
        try:
            self._recv(core_id, MsgType.PONG, context)
        except DeviceError:
            self._recv(core_id, MsgType.PONG, context)
            raise

    # -- session setup --------------------------------------------------------

    def load(self, core_id: int) -> None:
        """Download the session's program to a core."""
        from eithne.programs import descriptor

        if self.program is None:
            raise ProtocolError("session has no program to load")
        words = np.asarray(descriptor(self.program), dtype="<i4").tobytes()
        self._send(core_id, data_message(MsgType.LOAD, core_id, 0, ElementType.INT32, words))
        self._recv(core_id, MsgType.ACK, f"load {self.program.name} on core {core_id}")

    def handshake(self, core_id: int) -> None:
        """Fail unless the core's tables match the host's mirror."""
        self._send(core_id, Message(MsgType.HANDSHAKE, core_id))
        reply = self._recv(core_id, MsgType.HANDSHAKE, f"handshake with core {core_id}")
        words = np.frombuffer(reply.payload, dtype="<i4").tolist()
        try:
            device = structure_from_signature(words)
        except ValueError as exc:
            raise HandshakeError(f"core {core_id}: malformed signature: {exc}") from None
        n_kernels = words[1 + 3 * words[0]] if len(words) > 1 + 3 * words[0] else -1
        if device != self.vars.structure():
            raise HandshakeError(
                f"core {core_id}: device table {device} differs from host table {self.vars.structure()}"
            )
        expected_kernels = len(self.program.kernel_names) if self.program else 0
        if n_kernels != expected_kernels:
            raise HandshakeError(f"core {core_id}: device has {n_kernels} kernels, host expects {expected_kernels}")

    def connect(self, core_ids: Optional[Iterable[int]] = None, load: bool = True) -> None:
        for core_id in self.endpoints if core_ids is None else core_ids:
            if load:
                self.load(core_id)
            self.handshake(core_id)

    # -- data movement --------------------------------------------------------

    def send_var(self, core_id: int, var_id: int, confirm: bool = True) -> None:
        d = self.vars.descriptor(var_id)  # unknown IDs fail here, before any I/O
        etype, _, payload = self.vars.marshal(var_id)
        self._send(core_id, data_message(MsgType.DATA_SEND, core_id, d.var_id, etype, payload))
        if confirm:
            self._sync(core_id, f"send {d.name} to core {core_id}")

    def recv_var(self, core_id: int, var_id: int) -> None:
        d = self.vars.descriptor(var_id)
        self._send(core_id, Message(MsgType.DATA_REQUEST, core_id, var_id))
        reply = self._recv(core_id, MsgType.DATA_RESPONSE, f"recv {d.name} from core {core_id}")
        if reply.object_id != var_id:
            raise ProtocolError(f"asked for variable {var_id}, got {reply.object_id}")
        if reply.element_type is not d.kind.element_type:
            raise ProtocolError(f"variable {var_id}: element type {reply.element_type} != {d.kind.element_type}")
        try:
            self.vars.unmarshal(var_id, reply.payload)
        except PayloadSizeError as exc:
            raise ProtocolError(str(exc)) from None

    # -- execution ------------------------------------------------------------

    def execute_kernel(self, core_id: int, kernel_id: int, timeout: Optional[float] = None) -> TimingRecord:
        """Launch a kernel and block until it finishes. Only the EXECUTE ->
        EXECUTE_DONE exchange is inside the timed window."""
        ep = self._ep(core_id)
        request = Message(MsgType.EXECUTE, core_id, kernel_id)
        t_start = self.clock()
        send_message(ep, request)
        try:
            reply = recv_message(ep, self.timeout if timeout is None else timeout)
        finally:
            t_end = self.clock()
        if reply.msg_type is MsgType.ERROR:
            raise ExecutionError(reply.error_code, reply.object_id, f"execute kernel {kernel_id} on core {core_id}")
        if reply.msg_type is not MsgType.EXECUTE_DONE or reply.object_id != kernel_id:
            raise ProtocolError(f"expected EXECUTE_DONE({kernel_id}), got {reply.msg_type.name}({reply.object_id})")
        return TimingRecord(kernel_id, core_id, t_start, t_end)

    # -- probes ---------------------------------------------------------------

    def probe_latency(self, core_id: int, repetitions: int = 1000) -> LatencyStats:
        """PING/PONG round-trip times. A transport failure part way through
        returns what was measured, flagged incomplete."""
        if repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        ep = self._ep(core_id)
        ping = Message(MsgType.PING, core_id)
        samples: list[float] = []
        for _ in range(repetitions):
            t0 = self.clock()
            try:
                send_message(ep, ping)
                reply = recv_message(ep, self.timeout)
            except TransportError as exc:
                if not samples:
                    raise
                return LatencyStats.from_samples(samples, complete=False, error=str(exc))
            t1 = self.clock()
            if reply.msg_type is not MsgType.PONG:
                raise ProtocolError(f"expected PONG, got {reply.msg_type.name}")
            samples.append((t1 - t0) * 1e-9)
        return LatencyStats.from_samples(samples)

    def probe_bandwidth(self, core_id: int, sizes: Iterable[int], repetitions: int = 5) -> list[BandwidthSample]:
        """Time a DATA_SEND of each size into the core's scratch slot, up to the
        PONG that confirms it was consumed."""
        sizes = list(sizes)
        for size in sizes:
            if size <= 0 or size % 4:
                raise InvalidSizeError(f"probe size {size} B is not a positive multiple of 4")
        if repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        ep = self._ep(core_id)
        out = []
        for size in sizes:
            frame = data_message(MsgType.DATA_SEND, core_id, SCRATCH_VAR_ID, ElementType.FLOAT32, bytes(size))
            times = []
            for _ in range(repetitions):
                t0 = self.clock()
                send_message(ep, frame)
                self._sync(core_id, f"bandwidth probe {size} B")
                t1 = self.clock()
                times.append((t1 - t0) * 1e-9)
            out.append(BandwidthSample(size, statistics.median(times)))
        return out

    def close(self) -> None:
        for ep in self.endpoints.values():
            ep.close()

