"""Process-level performance knobs.

On small shared-CPU boxes, multithreaded BLAS spin-waits dominate the
dense SR solves and glibc's mmap-backed large allocations page-fault on
every training step.  `tune_process` pins the BLAS thread count and asks
malloc to keep large buffers on the heap; the CLI and the test suite
call it once at startup.
"""

from __future__ import annotations

import ctypes
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_limits = None  # keep the threadpoolctl controller alive


def tune_process(blas_threads: int | None = 1) -> None:
    global _limits
    if blas_threads is not None and blas_threads > 0:
        os.environ.setdefault("OMP_NUM_THREADS", str(blas_threads))
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(blas_threads))
        try:
            from threadpoolctl import threadpool_limits

            _limits = threadpool_limits(limits=blas_threads)
        except ImportError:
            pass  # env vars above still apply if numpy is not loaded yet
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 28)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 28)
    except OSError:
        pass


def resolve_threads(cli_value: int | None) -> int | None:
    """NQS_THREADS environment variable overrides the CLI flag."""
    env = os.environ.get("NQS_THREADS")
    if env:
        return int(env)
    return cli_value
