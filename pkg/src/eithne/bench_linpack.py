"""Single-precision LINPACK: matrix generation, sgefa/sgesl and the MFLOPS formulas.

Matrices are stored column-major in a flat FLOAT32 buffer with leading
dimension ``lda``: element (i, j) lives at ``a[j*lda + i]``. The factorisation
follows the classic LINPACK conventions: multipliers are stored negated below
the diagonal, ``ipvt[k]`` is the 0-based pivot row chosen at step k, and
``info`` is 0 on success, otherwise k+1 for the last k with U[k, k] exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eithne.errors import InvalidTimingError
from eithne.registry import Program, Registration, VariableTable, VarKind

F32 = np.float32
DEFAULT_N = 20
DEFAULT_SEED = 1325

# variable and kernel IDs, in registration order
A, B, IPVT, JOB, INFO = range(5)
SGEFA, SGESL = range(2)


def _cols(a: np.ndarray, n: int, lda: int) -> np.ndarray:
    """2-D (row, col) view over a flat column-major buffer."""
    return a[: n * lda].reshape(n, lda).T


# -- BLAS level 1 -------------------------------------------------------------


def isamax(n: int, x: np.ndarray, incx: int = 1) -> int:
    """Index of the first element of largest magnitude; 0 when n <= 0."""
    if n <= 0:
        return 0
    mags = np.abs(x[: (n - 1) * incx + 1 : incx])
    return int(np.argmax(mags))


def saxpy(n: int, da, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dy[:n] += da * dx[:n], in place, FLOAT32."""
    if n > 0 and da != 0:
        dy[:n] += F32(da) * dx[:n]
    return dy


def sscal(n: int, da, dx: np.ndarray) -> np.ndarray:
    if n > 0:
        dx[:n] *= F32(da)
    return dx


def sdot(n: int, dx: np.ndarray, dy: np.ndarray) -> np.float32:
    """Sequential FLOAT32 dot product (left-to-right accumulation)."""
    acc = F32(0.0)
    for i in range(n):
        acc = F32(acc + dx[i] * dy[i])
    return acc


# -- factor / solve -----------------------------------------------------------


def sgefa(a: np.ndarray, lda: int, n: int, ipvt: np.ndarray) -> int:
    """LU-factor the order-``n`` matrix in ``a`` in place; return ``info``."""
    m = _cols(a, n, lda)
    info = 0
    for k in range(n - 1):
        col = m[k:, k]
        l = isamax(n - k, col) + k
        ipvt[k] = l
        if m[l, k] == 0:
            info = k + 1
            continue
        if l != k:
            m[l, k], m[k, k] = m[k, k], m[l, k]
        t = F32(-1.0) / m[k, k]
        sscal(n - k - 1, t, m[k + 1 :, k])
        for j in range(k + 1, n):
            t = m[l, j]
            if l != k:
                m[l, j] = m[k, j]
                m[k, j] = t
            saxpy(n - k - 1, t, m[k + 1 :, k], m[k + 1 :, j])
    ipvt[n - 1] = n - 1
    if m[n - 1, n - 1] == 0:
        info = n
    return info


def sgesl(a: np.ndarray, lda: int, n: int, ipvt: np.ndarray, b: np.ndarray, job: int = 0) -> None:
    """Solve A x = b (job == 0) or A^T x = b (job != 0) using ``sgefa`` output.
    ``b`` is overwritten with x."""
    m = _cols(a, n, lda)
    if job == 0:
        for k in range(n - 1):
            l = int(ipvt[k])
            t = b[l]
            if l != k:
                b[l] = b[k]
                b[k] = t
            saxpy(n - k - 1, t, m[k + 1 :, k], b[k + 1 :])
        for k in range(n - 1, -1, -1):
            b[k] = b[k] / m[k, k]
            t = -b[k]
            saxpy(k, t, m[:k, k], b[:k])
    else:
        for k in range(n):
            t = sdot(k, m[:k, k], b[:k])
            b[k] = (b[k] - t) / m[k, k]
        for k in range(n - 2, -1, -1):
            b[k] = b[k] + sdot(n - k - 1, m[k + 1 :, k], b[k + 1 :])
            l = int(ipvt[k])
            if l != k:
                b[l], b[k] = b[k], b[l]


# -- problem setup and verification -------------------------------------------


@dataclass
class LinpackProblem:
    n: int
    lda: int
    a: np.ndarray
    a_orig: np.ndarray
    b: np.ndarray
    b_orig: np.ndarray
    x_true: np.ndarray
    ipvt: np.ndarray
    job: int = 0
    info: int = 0

    @property
    def x(self) -> np.ndarray:
        """The solution, once ``sgesl`` has overwritten ``b``."""
        return self.b


def lcg_stream(count: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """``count`` FLOAT32 values in [-0.5, 0.5) from x <- 3125 x mod 65536."""
    out = np.empty(count, dtype=F32)
    x = seed % 65536
    for i in range(count):
        x = (3125 * x) % 65536
        out[i] = x / 65536.0 - 0.5
    return out


def matgen(n: int = DEFAULT_N, lda: int | None = None, seed: int = DEFAULT_SEED) -> LinpackProblem:
    lda = n if lda is None else lda
    if n < 1 or lda < n:
        raise ValueError(f"need n >= 1 and lda >= n, got n={n} lda={lda}")
    a = np.zeros(n * lda, dtype=F32)
    m = _cols(a, n, lda)
    vals = lcg_stream(n * n, seed)
    for j in range(n):
        m[:n, j] = vals[j * n : (j + 1) * n]
    b = np.zeros(n, dtype=F32)
    for j in range(n):
        b += m[:n, j]
    return LinpackProblem(
        n=n,
        lda=lda,
        a=a,
        a_orig=a.copy(),
        b=b,
        b_orig=b.copy(),
        x_true=np.ones(n, dtype=F32),
        ipvt=np.zeros(n, dtype=np.int32),
    )


def solve_local(p: LinpackProblem) -> LinpackProblem:
    """Factor and solve in-process, without the framework."""
    p.info = sgefa(p.a, p.lda, p.n, p.ipvt)
    if p.info == 0:
        sgesl(p.a, p.lda, p.n, p.ipvt, p.b, p.job)
    return p


def residual_check(p: LinpackProblem) -> tuple[float, float]:
    """(max |A_orig x - b_orig|, max |x - 1|), computed in double precision."""
    a = _cols(p.a_orig, p.n, p.lda)[: p.n, : p.n].astype(np.float64)
    x = p.x.astype(np.float64)
    resid = float(np.max(np.abs(a @ x - p.b_orig.astype(np.float64)))) if p.n else 0.0
    xerr = float(np.max(np.abs(x - 1.0))) if p.n else 0.0
    return resid, xerr


def reconstruct_from_lu(a_lu: np.ndarray, lda: int, n: int, ipvt: np.ndarray) -> np.ndarray:
    """Rebuild P L U from ``sgefa`` output in double precision."""
    m = _cols(a_lu, n, lda)[:n, :n].astype(np.float64)
    x = np.triu(m)
    for k in range(n - 2, -1, -1):
        # undo the elimination step: rows below k gain -stored * row k
        x[k + 1 :, :] -= np.outer(m[k + 1 :, k], x[k, :])
        l = int(ipvt[k])
        if l != k:
            x[[k, l], :] = x[[l, k], :]
    return x


# -- formulas -----------------------------------------------------------------


def linpack_ops(n: int) -> float:
    return 2.0 * n * n * n / 3.0 + 2.0 * n * n


def mflops(ops: float, elapsed_s: float) -> float:
    if elapsed_s <= 0:
        raise InvalidTimingError(f"elapsed time must be positive, got {elapsed_s}")
    return ops / (elapsed_s * 1_000_000)


# -- framework program --------------------------------------------------------


def registrations(n: int = DEFAULT_N, lda: int | None = None) -> list[Registration]:
    lda = n if lda is None else lda
    return [
        Registration(A, "A", VarKind.FLOAT_ARRAY, n * lda),
        Registration(B, "B", VarKind.FLOAT_ARRAY, n),
        Registration(IPVT, "IPVT", VarKind.INT_ARRAY, n),
        Registration(JOB, "JOB", VarKind.INT_SCALAR),
        Registration(INFO, "INFO", VarKind.INT_SCALAR),
    ]


def bind_kernels(table: VariableTable):
    a = table.array(A)
    b = table.array(B)
    ipvt = table.array(IPVT)
    n = b.size
    lda = a.size // n

    def sgefa_kernel() -> None:
        table.set_scalar(INFO, sgefa(a, lda, n, ipvt))

    def sgesl_kernel() -> None:
        sgesl(a, lda, n, ipvt, b, table.get_scalar(JOB))

    return [sgefa_kernel, sgesl_kernel]


def make_program(n: int = DEFAULT_N, lda: int | None = None, kernel_cost_bytes: int = 0) -> Program:
    lda = n if lda is None else lda
    return Program(
        name="linpack",
        registrations=registrations(n, lda),
        kernel_names=["SGEFA", "SGESL"],
        bind=bind_kernels,
        kernel_cost_bytes=kernel_cost_bytes,
        params={"n": n, "lda": lda},
    )
