"""Catalog of downloadable programs.

A LOAD frame carries ``[program_id, *params]`` as INT32 words; both the host
and the device resolve it through :func:`load_program`, so the two sides
register identical tables.
"""

from __future__ import annotations

from typing import Sequence

from eithne import bench_fourier, bench_linpack
from eithne.registry import Program

NOOP, LINPACK, FOURIER = 0, 1, 2


def make_noop_program(kernel_cost_bytes: int = 0) -> Program:
    return Program("noop", [], ["NOP"], lambda table: [lambda: None], kernel_cost_bytes)


def load_program(words: Sequence[int]) -> Program:
    program_id, *params = words
    if program_id == NOOP:
        cost, = params or [0]
        return make_noop_program(cost)
    if program_id == LINPACK:
        n, lda, cost = params
        return bench_linpack.make_program(n, lda, cost)
    if program_id == FOURIER:
        log2n, cost = params
        if not 0 <= log2n <= 24:
            raise ValueError(f"log2n={log2n} out of range")
        return bench_fourier.make_program(log2n, cost)
    raise KeyError(program_id)


def descriptor(program: Program) -> list[int]:
    """Inverse of :func:`load_program` for catalog programs."""
    if program.name == "noop":
        return [NOOP, program.kernel_cost_bytes]
    if program.name == "linpack":
        return [LINPACK, program.params["n"], program.params["lda"], program.kernel_cost_bytes]
    if program.name == "fourier":
        return [FOURIER, program.params["log2n"], program.kernel_cost_bytes]
    raise KeyError(f"program {program.name!r} is not in the catalog")
