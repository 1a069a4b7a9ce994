"""Simulated micro-core device.

Each :class:`DeviceCore` runs a listener on its own endpoint: it services data
transfers and kernel launches strictly in arrival order and enforces the
core's scratchpad budget over everything registered on it. Kernels run
natively, inside the core's thread.
"""

from __future__ import annotations

import argparse
import logging
import os
import socket
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from eithne.errors import (
    ConnectionClosedError,
    EithneError,
    MemoryBudgetError,
    PayloadSizeError,
    SpawnError,
    TransportError,
    UnknownVariableError,
)
from eithne.registry import KernelDescriptor, Program, Registration, VariableTable
from eithne.wire import (
    ElementType,
    ErrorCode,
    Message,
    MsgType,
    TcpEndpoint,
    TransportEndpoint,
    channel_pair,
    data_message,
    recv_message,
    send_message,
    tcp_pair,
)

log = logging.getLogger(__name__)

KB = 1024
EPIPHANY_SCRATCHPAD = 32 * KB
SOFTCORE_FFT_SCRATCHPAD = 128 * KB

# DATA_SEND to this object ID is checked against free scratchpad and dropped;
# the bandwidth probe uses it.
SCRATCH_VAR_ID = 0xFFFF

DEFAULT_PORT_BASE = 47100


class CoreState(Enum):
    IDLE = "idle"
    RUNNING = "running"
    STOPPED = "stopped"


def check_budget(registrations: Sequence[Registration], budget_bytes: int, kernel_cost_bytes: int = 0) -> int:
    """Return the bytes used, or raise naming the first registration that
    pushes the cumulative total past ``budget_bytes``."""
    used = kernel_cost_bytes
    if used > budget_bytes:
        raise MemoryBudgetError("<kernels>", used - budget_bytes, budget_bytes)
    for reg in registrations:
        used += reg.byte_size
        if used > budget_bytes:
            raise MemoryBudgetError(reg.name or f"v{reg.var_id}", used - budget_bytes, budget_bytes)
    return used


# Resolves a LOAD payload (program id followed by parameters) into a Program.
ProgramLoader = Callable[[Sequence[int]], Program]


@dataclass
class DeviceCore:
    core_id: int
    endpoint: TransportEndpoint
    mem_budget_bytes: int = EPIPHANY_SCRATCHPAD
    loader: Optional[ProgramLoader] = None
    vars: VariableTable = field(default_factory=VariableTable)
    kernels: list[KernelDescriptor] = field(default_factory=list)
    kernel_cost_bytes: int = 0
    state: CoreState = CoreState.IDLE
    program: Optional[Program] = None

    @property
    def used_bytes(self) -> int:
        return self.vars.total_bytes() + self.kernel_cost_bytes

    @property
    def free_bytes(self) -> int:
        return self.mem_budget_bytes - self.used_bytes

    # -- setup ----------------------------------------------------------------

    def init(self, program: Optional[Program]) -> None:
        """Install ``program``; on a budget error the core keeps its old tables."""
        if self.state is CoreState.STOPPED:
            raise EithneError(f"core {self.core_id} is stopped")
        if program is None:
            self.vars, self.kernels, self.kernel_cost_bytes, self.program = VariableTable(), [], 0, None
            return
        check_budget(program.registrations, self.mem_budget_bytes, program.kernel_cost_bytes)
        table, kernels = program.build()
        self.vars, self.kernels, self.kernel_cost_bytes, self.program = (
            table,
            kernels,
            program.kernel_cost_bytes,
            program,
        )

    # -- listener -------------------------------------------------------------

    def _reply(self, m: Message) -> None:
        send_message(self.endpoint, m)

    def _error(self, code: ErrorCode, object_id: int) -> None:
        self._reply(Message(MsgType.ERROR, self.core_id, object_id, error_code=int(code)))

    def handle(self, m: Message) -> bool:
        """Service one request. Returns False when the listener should stop."""
        t = m.msg_type
        if t is MsgType.PING:
            self._reply(Message(MsgType.PONG, self.core_id, m.object_id))
        elif t is MsgType.DATA_SEND:
            if m.object_id == SCRATCH_VAR_ID:
                if len(m.payload) > self.free_bytes:
                    self._error(ErrorCode.MEMORY_BUDGET, m.object_id)
                return True
            try:
                d = self.vars.descriptor(m.object_id)
                if m.element_type is not d.kind.element_type:
                    self._error(ErrorCode.TYPE_MISMATCH, m.object_id)
                    return True
                self.vars.unmarshal(m.object_id, m.payload)
            except UnknownVariableError:
                self._error(ErrorCode.UNKNOWN_VARIABLE, m.object_id)
            except PayloadSizeError:
                self._error(ErrorCode.PAYLOAD_SIZE, m.object_id)
        elif t is MsgType.DATA_REQUEST:
            try:
                etype, _, payload = self.vars.marshal(m.object_id)
            except UnknownVariableError:
                self._error(ErrorCode.UNKNOWN_VARIABLE, m.object_id)
            else:
                self._reply(data_message(MsgType.DATA_RESPONSE, self.core_id, m.object_id, etype, payload))
        elif t is MsgType.EXECUTE:
            if m.object_id >= len(self.kernels):
                self._error(ErrorCode.UNKNOWN_KERNEL, m.object_id)
                return True
            self.state = CoreState.RUNNING
            try:
                self.kernels[m.object_id].entry()
            except Exception:
                log.exception("core %d: kernel %d failed", self.core_id, m.object_id)
                self._error(ErrorCode.KERNEL_FAULT, m.object_id)
                return True
            finally:
                self.state = CoreState.IDLE
            self._reply(Message(MsgType.EXECUTE_DONE, self.core_id, m.object_id))
        elif t is MsgType.HANDSHAKE:
            payload = np.asarray(self.vars.signature() + [len(self.kernels)], dtype="<i4").tobytes()
            self._reply(data_message(MsgType.HANDSHAKE, self.core_id, 0, ElementType.INT32, payload))
        elif t is MsgType.LOAD:
            words = np.frombuffer(m.payload, dtype="<i4").tolist()
            if self.loader is None:
                self._error(ErrorCode.UNKNOWN_PROGRAM, m.object_id)
                return True
            try:
                program = self.loader(words)
            except (KeyError, ValueError, IndexError):
                self._error(ErrorCode.UNKNOWN_PROGRAM, m.object_id)
                return True
            try:
                self.init(program)
            except MemoryBudgetError as exc:
                log.warning("core %d: %s", self.core_id, exc)
                self._error(ErrorCode.MEMORY_BUDGET, m.object_id)
                return True
            self._reply(Message(MsgType.ACK, self.core_id, m.object_id))
        elif t is MsgType.STOP:
            self._reply(Message(MsgType.ACK, self.core_id, m.object_id))
            return False
        else:
            self._error(ErrorCode.UNEXPECTED_MESSAGE, m.object_id)
        return True

    def listen(self) -> None:
        """Loop until STOP or until the transport closes."""
        try:
            while True:
                try:
                    m = recv_message(self.endpoint)
                except ConnectionClosedError:
                    break
                if not self.handle(m):
                    break
        except TransportError as exc:
            log.warning("core %d: transport failed: %s", self.core_id, exc)
        except EithneError as exc:
            log.warning("core %d: bad frame, listener exiting: %s", self.core_id, exc)
        finally:
            self.state = CoreState.STOPPED
            self.endpoint.close()


def device_init(core: DeviceCore, program: Optional[Program]) -> None:
    core.init(program)


def listener_loop(core: DeviceCore) -> None:
    core.listen()


# -- devices ------------------------------------------------------------------


@dataclass
class SimulatedDevice:
    name: str = "sim"
    core_count: int = 8
    mem_budget_bytes: int = EPIPHANY_SCRATCHPAD
    clock_mhz: float = 100.0


TransportFactory = Callable[[int], tuple[TransportEndpoint, TransportEndpoint]]


def in_process_factory(core_id: int):
    return channel_pair()


def tcp_factory(core_id: int):
    return tcp_pair()


@dataclass
class DeviceHandle:
    config: SimulatedDevice
    cores: list[DeviceCore]
    host_endpoints: dict[int, TransportEndpoint]
    threads: list[threading.Thread]

    def stop(self, timeout: float = 5.0) -> None:
        """Send STOP to every live core and join the listeners."""
        for core_id, ep in self.host_endpoints.items():
            if ep.closed:
                continue
            try:
                send_message(ep, Message(MsgType.STOP, core_id))
                reply = recv_message(ep, timeout=timeout)
                while reply.msg_type is not MsgType.ACK:
                    reply = recv_message(ep, timeout=timeout)
            except TransportError:
                pass
            ep.close()
        for t in self.threads:
            t.join(timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def spawn_device(
    config: SimulatedDevice,
    transport_factory: TransportFactory = in_process_factory,
    program: Optional[Program] = None,
    loader: Optional[ProgramLoader] = None,
) -> DeviceHandle:
    """Start one listener thread per core. Nothing is left running if any
    core fails to come up."""
    if config.core_count < 1:
        raise SpawnError("core_count must be >= 1")
    cores: list[DeviceCore] = []
    host_eps: dict[int, TransportEndpoint] = {}
    try:
        for core_id in range(config.core_count):
            host_ep, dev_ep = transport_factory(core_id)
            host_eps[core_id] = host_ep
            core = DeviceCore(core_id, dev_ep, config.mem_budget_bytes, loader)
            cores.append(core)
            if program is not None:
                core.init(program)
    except Exception as exc:
        for ep in host_eps.values():
            ep.close()
        for core in cores:
            core.endpoint.close()
        if isinstance(exc, MemoryBudgetError):
            raise
        raise SpawnError(f"failed to spawn {config.name}: {exc}") from exc
    threads = []
    for core in cores:
        t = threading.Thread(target=core.listen, name=f"{config.name}-core{core.core_id}", daemon=True)
        t.start()
        threads.append(t)
    return DeviceHandle(config, cores, host_eps, threads)


# -- standalone device process --------------------------------------------------


def serve(
    config: SimulatedDevice,
    host: str = "127.0.0.1",
    port_base: int = DEFAULT_PORT_BASE,
    loader: Optional[ProgramLoader] = None,
    ready: Optional[threading.Event] = None,
    stop: Optional[threading.Event] = None,
) -> None:
    """Expose core ``i`` on ``port_base + i``. Each accepted connection gets a
    fresh core (empty tables, full scratchpad) and a listener; the host ends
    it with STOP or by closing. Runs until ``stop`` is set."""
    servers = []
    try:
        for core_id in range(config.core_count):
            servers.append(socket.create_server((host, port_base + core_id)))
    except OSError as exc:
        for srv in servers:
            srv.close()
        raise SpawnError(f"cannot listen on {host}:{port_base}+: {exc}") from exc
    for srv in servers:
        srv.settimeout(0.2)
    if ready is not None:
        ready.set()
    stop = stop or threading.Event()

    def accept_loop(core_id: int, srv: socket.socket) -> None:
        with srv:
            while not stop.is_set():
                try:
                    conn, _ = srv.accept()
                except socket.timeout:
                    continue
                except OSError:
                    return
                conn.settimeout(None)
                core = DeviceCore(core_id, TcpEndpoint(conn), config.mem_budget_bytes, loader)
                threading.Thread(target=core.listen, daemon=True).start()

    threads = [threading.Thread(target=accept_loop, args=(i, s), daemon=True) for i, s in enumerate(servers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def main(argv=None) -> int:
    from eithne import cli, programs

    ap = argparse.ArgumentParser(prog="eithne-device", description="Serve simulated cores over TCP.")
    ap.add_argument("--config", help="run configuration (JSON); defaults to the built-in one")
    ap.add_argument("--device", help="device name from the configuration")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port-base", type=int, default=None, help="defaults to $EITHNE_PORT_BASE")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = cli.load_config(args.config)
        dev = cli.pick_device(cfg, args.device)
    except EithneError as exc:
        print(f"error: {exc}")
        return 2
    port_base = args.port_base
    if port_base is None:
        port_base = int(os.environ.get("EITHNE_PORT_BASE", DEFAULT_PORT_BASE))
    sim = SimulatedDevice(dev["name"], dev["cores"], dev["mem_budget_bytes"], dev["clock_mhz"])
    log.info("serving %s: %d cores on %s:%d+", sim.name, sim.core_count, args.host, port_base)
    serve(sim, args.host, port_base, programs.load_program)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
