"""Backend selection for the hot kernels.

Set ``SASESIM_DISABLE_NUMBA=1`` to force the pure-numpy path. When numba is
missing the numpy path is used automatically.
"""
from __future__ import annotations

import os

try:
    import numba
    HAS_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # avoids probing an outdated system TBB on every first parallel call
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

ENV_FLAG = "SASESIM_DISABLE_NUMBA"

njit_opts = {"cache": True, "nogil": True, "error_model": "numpy"}


def numba_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


def default_backend() -> str:
    if HAS_NUMBA and not numba_disabled():
        return "numba"
    return "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def set_workers(n: int | None) -> int:
    """Set the numba thread count, clamped to what the runtime allows.

    Results never depend on this value; it only changes wall time.
    """
    if not HAS_NUMBA:
        return 1
    limit = numba.config.NUMBA_NUM_THREADS
    if n is None:
        return numba.get_num_threads()
    n = max(1, min(int(n), limit))
    numba.set_num_threads(n)
    return n
