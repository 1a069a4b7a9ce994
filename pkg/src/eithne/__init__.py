"""Host/device benchmarking framework for micro-core architectures.

Simulated devices speak a small binary protocol (``eithne.wire``) to a host
session (``eithne.host``); LINPACK and Fourier kernels run on the device side
and ``eithne.metrics`` turns timings and power figures into comparison tables.
"""

__version__ = "0.1.0"
