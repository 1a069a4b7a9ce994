"""Typed variable and kernel tables shared by the host and device sides.

Both sides build a :class:`VariableTable` from the same registration sequence.
The table owns the storage (zero-initialised numpy arrays); kernels and the
host reach it through :meth:`VariableTable.array` and friends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Sequence

import numpy as np

from eithne.errors import (
    InvalidLengthError,
    KindMismatchError,
    PayloadSizeError,
    RegistrationError,
    UnknownVariableError,
)
from eithne.wire import ElementType

ELEMENT_BYTES = 4


class VarKind(IntEnum):
    INT_SCALAR = 0
    FLOAT_SCALAR = 1
    INT_ARRAY = 2
    FLOAT_ARRAY = 3

    @property
    def is_scalar(self) -> bool:
        return self in (VarKind.INT_SCALAR, VarKind.FLOAT_SCALAR)

    @property
    def element_type(self) -> ElementType:
        if self in (VarKind.INT_SCALAR, VarKind.INT_ARRAY):
            return ElementType.INT32
        return ElementType.FLOAT32

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.element_type.numpy_dtype)


@dataclass(frozen=True)
class VariableDescriptor:
    var_id: int
    name: str
    kind: VarKind
    length: int

    @property
    def byte_size(self) -> int:
        return ELEMENT_BYTES * self.length


@dataclass(frozen=True)
class Registration:
    """A registration request, before any storage exists."""

    var_id: int
    name: str
    kind: VarKind
    length: int = 1

    @property
    def byte_size(self) -> int:
        return ELEMENT_BYTES * self.length


class VariableTable:
    def __init__(self):
        self._descriptors: dict[int, VariableDescriptor] = {}
        self._storage: dict[int, np.ndarray] = {}

    # -- registration -------------------------------------------------------

    def _check_new(self, var_id: int, length: int) -> None:
        if not 0 <= var_id <= 0xFFFF:
            raise RegistrationError(f"var_id {var_id} does not fit in 16 bits")
        if var_id in self._descriptors:
            raise RegistrationError(f"var_id {var_id} already registered")
        if length < 1:
            raise InvalidLengthError(f"length must be >= 1, got {length}")

    def register_array(self, var_id: int, kind: VarKind, length: int, name: str = "") -> VariableDescriptor:
        kind = VarKind(kind)
        if kind.is_scalar:
            raise KindMismatchError(f"{kind.name} is not an array kind")
        self._check_new(var_id, length)
        return self._add(VariableDescriptor(var_id, name or f"v{var_id}", kind, int(length)))

    def register_scalar(self, var_id: int, kind: VarKind, name: str = "") -> VariableDescriptor:
        kind = VarKind(kind)
        if not kind.is_scalar:
            raise KindMismatchError(f"{kind.name} is not a scalar kind")
        self._check_new(var_id, 1)
        return self._add(VariableDescriptor(var_id, name or f"v{var_id}", kind, 1))

    def register(self, reg: Registration) -> VariableDescriptor:
        if VarKind(reg.kind).is_scalar:
            if reg.length != 1:
                raise KindMismatchError(f"scalar {reg.name!r} must have length 1")
            return self.register_scalar(reg.var_id, reg.kind, reg.name)
        return self.register_array(reg.var_id, reg.kind, reg.length, reg.name)

    def _add(self, d: VariableDescriptor) -> VariableDescriptor:
        self._descriptors[d.var_id] = d
        self._storage[d.var_id] = np.zeros(d.length, dtype=d.kind.dtype)
        return d

    @classmethod
    def from_registrations(cls, regs: Iterable[Registration]) -> "VariableTable":
        table = cls()
        for reg in regs:
            table.register(reg)
        return table

    # -- lookup -------------------------------------------------------------

    def __contains__(self, var_id: int) -> bool:
        return var_id in self._descriptors

    def __len__(self) -> int:
        return len(self._descriptors)

    @property
    def descriptors(self) -> list[VariableDescriptor]:
        return list(self._descriptors.values())

    def descriptor(self, var_id: int) -> VariableDescriptor:
        try:
            return self._descriptors[var_id]
        except KeyError:
            raise UnknownVariableError(f"variable {var_id} is not registered") from None

    def id_of(self, name: str) -> int:
        for d in self._descriptors.values():
            if d.name == name:
                return d.var_id
        raise UnknownVariableError(f"no variable named {name!r}")

    def array(self, var_id: int) -> np.ndarray:
        """The live storage array; writes go straight to the table."""
        self.descriptor(var_id)
        return self._storage[var_id]

    def get_scalar(self, var_id: int):
        d = self.descriptor(var_id)
        return self._storage[var_id][0].item() if d.kind.is_scalar else None

    def set_scalar(self, var_id: int, value) -> None:
        d = self.descriptor(var_id)
        if not d.kind.is_scalar:
            raise KindMismatchError(f"variable {var_id} is not a scalar")
        self._storage[var_id][0] = value

    def set_array(self, var_id: int, values) -> None:
        d = self.descriptor(var_id)
        values = np.asarray(values, dtype=d.kind.dtype).ravel()
        if values.size != d.length:
            raise PayloadSizeError(f"variable {var_id} holds {d.length} elements, got {values.size}")
        self._storage[var_id][:] = values

    def total_bytes(self) -> int:
        return sum(d.byte_size for d in self._descriptors.values())

    # -- marshalling --------------------------------------------------------

    def marshal(self, var_id: int) -> tuple[ElementType, int, bytes]:
        d = self.descriptor(var_id)
        return d.kind.element_type, d.length, self._storage[var_id].tobytes()

    def unmarshal(self, var_id: int, payload: bytes) -> None:
        d = self.descriptor(var_id)
        if len(payload) != d.byte_size:
            raise PayloadSizeError(f"variable {var_id} needs {d.byte_size} B, payload has {len(payload)} B")
        self._storage[var_id][:] = np.frombuffer(payload, dtype=d.kind.dtype)

    # -- structure ----------------------------------------------------------

    def structure(self) -> tuple[tuple[int, VarKind, int], ...]:
        return tuple((d.var_id, d.kind, d.length) for d in self._descriptors.values())

    def signature(self) -> list[int]:
        """Flat INT32 encoding of the structure, as carried by HANDSHAKE."""
        out = [len(self._descriptors)]
        for var_id, kind, length in self.structure():
            out += [var_id, int(kind), length]
        return out


def structurally_equal(a: VariableTable, b: VariableTable) -> bool:
    """Same IDs, kinds and lengths in the same registration order. Names and
    current values are ignored."""
    return a.structure() == b.structure()


def structure_from_signature(sig: Sequence[int]) -> tuple[tuple[int, VarKind, int], ...]:
    if not sig:
        raise ValueError("empty signature")
    n = sig[0]
    if len(sig) < 1 + 3 * n:
        raise ValueError(f"signature declares {n} variables but has {len(sig)} words")
    return tuple(
        (int(sig[1 + 3 * i]), VarKind(int(sig[2 + 3 * i])), int(sig[3 + 3 * i])) for i in range(n)
    )


# -- kernels ------------------------------------------------------------------

Kernel = Callable[[], None]


@dataclass(frozen=True)
class KernelDescriptor:
    kernel_id: int
    name: str
    entry: Kernel


@dataclass
class Program:
    """Everything downloaded to a core: registrations plus kernels.

    ``bind`` receives the core's freshly built table and returns the
    parameterless kernel entries in kernel-ID order, each closed over that
    table. ``kernel_cost_bytes`` stands in for the binary size of the kernels
    and counts against the core's scratchpad.
    """

    name: str
    registrations: list[Registration]
    kernel_names: list[str]
    bind: Callable[[VariableTable], Sequence[Kernel]]
    kernel_cost_bytes: int = 0
    params: dict = field(default_factory=dict)

    def data_bytes(self) -> int:
        return sum(r.byte_size for r in self.registrations)

    def footprint(self) -> int:
        return self.data_bytes() + self.kernel_cost_bytes

    def build(self) -> tuple[VariableTable, list[KernelDescriptor]]:
        table = VariableTable.from_registrations(self.registrations)
        entries = list(self.bind(table))
        if len(entries) != len(self.kernel_names):
            raise RegistrationError(
                f"program {self.name!r} bound {len(entries)} kernels for {len(self.kernel_names)} names"
            )
        kernels = [KernelDescriptor(i, n, e) for i, (n, e) in enumerate(zip(self.kernel_names, entries))]
        return table, kernels
