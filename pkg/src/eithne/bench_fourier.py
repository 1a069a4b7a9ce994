"""Direct DFT and recursive radix-2 FFT in single precision.

Complex values are FLOAT32 ``(re, im)`` pairs. A signal is an ``(n, 2)``
float32 array; on the wire it travels as the interleaved flat array.

The FFT keeps the shape of the classic recursive decimation-in-time code:
the two half transforms are computed over doubled strides of the input, the
twiddle factor is advanced by repeated complex multiplication and each
butterfly updates the output in place. Neither transform normalises, so an
inverse must be scaled by 1/n by the caller.
"""

from __future__ import annotations

import math

import numpy as np

from eithne.errors import InvalidSizeError
from eithne.registry import Program, Registration, VariableTable, VarKind

F32 = np.float32
PI = math.pi
DEFAULT_LOG2N = 8

# variable and kernel IDs, in registration order
SIG, F, STRIDE, INV, LOG2N = range(5)
DFT, FFT = range(2)


def comp_euler(theta) -> np.ndarray:
    """(cos theta, sin theta) as a FLOAT32 pair."""
    t = float(F32(theta))
    return np.array([math.cos(t), math.sin(t)], dtype=F32)


def comp_mul_self(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x <- x * y for FLOAT32 complex pairs (or stacks of them)."""
    a, b = x[..., 0].copy(), x[..., 1].copy()
    c, d = y[..., 0], y[..., 1]
    x[..., 0] = a * c - b * d
    x[..., 1] = a * d + b * c
    return x


def as_signal(x) -> np.ndarray:
    """Coerce complex numbers, interleaved floats or (n, 2) pairs to (n, 2) float32."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return np.stack([x.real, x.imag], axis=-1).astype(F32)
    x = x.astype(F32)
    if x.ndim == 1:
        if x.size % 2:
            raise InvalidSizeError("interleaved signal needs an even number of floats")
        return x.reshape(-1, 2)
    return x


def to_complex(sig: np.ndarray) -> np.ndarray:
    sig = as_signal(sig)
    return sig[:, 0].astype(np.float64) + 1j * sig[:, 1].astype(np.float64)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def dft(sig, inverse: bool = False) -> np.ndarray:
    """Direct O(n^2) transform in FLOAT32, unnormalised."""
    sig = as_signal(sig)
    n = sig.shape[0]
    if n < 1:
        raise InvalidSizeError("DFT needs at least one sample")
    sign = 1.0 if inverse else -1.0
    j = np.arange(n)
    out = np.empty_like(sig)
    re, im = sig[:, 0], sig[:, 1]
    for k in range(n):
        # reduce j*k mod n first so the FLOAT32 angle stays in [-2pi, 2pi]
        theta = (sign * 2.0 * PI * ((j * k) % n) / n).astype(F32)
        c = np.cos(theta)
        s = np.sin(theta)
        out[k, 0] = np.sum(re * c - im * s, dtype=F32)
        out[k, 1] = np.sum(re * s + im * c, dtype=F32)
    return out


def _twiddles(hn: int, inv: bool, single: bool) -> np.ndarray:
    """1, ep, ep^2, ... ep^(hn-1) with ep = e^(+-i pi/hn), by repeated multiplication."""
    tw = np.empty((hn, 2), dtype=F32)
    if single:
        ep = comp_euler(F32(PI if inv else -PI) / F32(hn))
        pi = np.array([1.0, 0.0], dtype=F32)
        for i in range(hn):
            tw[i] = pi
            comp_mul_self(pi, ep)
        return tw
    theta = (PI if inv else -PI) / hn
    ep = complex(math.cos(theta), math.sin(theta))
    pi = 1.0 + 0.0j
    for i in range(hn):
        tw[i] = (pi.real, pi.imag)
        pi *= ep
    return tw


def _fft(sig: np.ndarray, so: int, f: np.ndarray, fo: int, s: int, n: int, inv: bool, single: bool) -> None:
    hn = n >> 1
    if not hn:
        f[fo] = sig[so]
        return
    _fft(sig, so, f, fo, s << 1, hn, inv, single)
    _fft(sig, so + s, f, fo + hn, s << 1, hn, inv, single)
    tw = _twiddles(hn, inv, single)
    even = f[fo : fo + hn].copy()
    po = f[fo + hn : fo + n]
    comp_mul_self(po, tw)
    f[fo : fo + hn] = even + po
    f[fo + hn : fo + n] = even - po


def fft(
    sig: np.ndarray, f: np.ndarray, s: int, n: int, inverse: bool = False, single_twiddle: bool = False
) -> None:
    """Transform ``n`` samples of ``sig`` taken at stride ``s`` into ``f`` (out of place).

    Butterflies are FLOAT32. The running twiddle is advanced in double
    precision and rounded to FLOAT32 per use; ``single_twiddle=True`` keeps
    the accumulator in FLOAT32 as well, whose error grows roughly linearly
    with ``n`` (about 3e-4 max-abs at n=1024 on unit-scale inputs).
    """
    if not is_power_of_two(n):
        raise InvalidSizeError(f"FFT length must be a power of two, got {n}")
    if s < 1 or (n - 1) * s >= sig.shape[0] or f.shape[0] < n:
        raise InvalidSizeError(f"buffers too small for n={n} at stride {s}")
    if np.shares_memory(sig, f):
        raise InvalidSizeError("fft is out of place: sig and f must not overlap")
    _fft(sig, 0, f, 0, s, n, bool(inverse), single_twiddle)


def fft_forward(x, inverse: bool = False, single_twiddle: bool = False) -> np.ndarray:
    sig = as_signal(x).copy()
    f = np.zeros_like(sig)
    fft(sig, f, 1, sig.shape[0], inverse, single_twiddle)
    return f


def fft_roundtrip(x) -> np.ndarray:
    """Forward, inverse, then 1/n scaling (host-side) in FLOAT32."""
    sig = as_signal(x)
    back = fft_forward(fft_forward(sig), inverse=True)
    return (back * F32(1.0 / sig.shape[0])).astype(F32)


def make_test_signal(n: int, seed: int = 1) -> np.ndarray:
    """Deterministic samples uniform in [-1, 1)^2, shape (n, 2)."""
    if n < 1:
        raise InvalidSizeError("signal needs at least one sample")
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n, 2)).astype(F32)


# -- framework program --------------------------------------------------------


def registrations(log2n: int = DEFAULT_LOG2N) -> list[Registration]:
    n = 1 << log2n
    return [
        Registration(SIG, "sig", VarKind.FLOAT_ARRAY, 2 * n),
        Registration(F, "f", VarKind.FLOAT_ARRAY, 2 * n),
        Registration(STRIDE, "s", VarKind.INT_SCALAR),
        Registration(INV, "inv", VarKind.INT_SCALAR),
        Registration(LOG2N, "log2n", VarKind.INT_SCALAR),
    ]


def bind_kernels(table: VariableTable):
    sig = table.array(SIG).reshape(-1, 2)
    f = table.array(F).reshape(-1, 2)

    def dft_kernel() -> None:
        n = 1 << table.get_scalar(LOG2N)
        s = table.get_scalar(STRIDE)
        f[:n] = dft(sig[: (n - 1) * s + 1 : s], bool(table.get_scalar(INV)))

    def fft_wrapper() -> None:
        fft(sig, f, table.get_scalar(STRIDE), 1 << table.get_scalar(LOG2N), bool(table.get_scalar(INV)))

    return [dft_kernel, fft_wrapper]


def make_program(log2n: int = DEFAULT_LOG2N, kernel_cost_bytes: int = 0) -> Program:
    return Program(
        name="fourier",
        registrations=registrations(log2n),
        kernel_names=["DFT", "FFT"],
        bind=bind_kernels,
        kernel_cost_bytes=kernel_cost_bytes,
        params={"log2n": log2n},
    )
