"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_pykernels`` is used. Setting ``SEALTW_PURE_PYTHON=1``
forces the fallback. ``SEAL_TW_THREADS`` caps the OpenMP thread count of the
compiled kernels.

``seal_batch`` is two matrix products plus elementwise work, so it always
runs through numpy/BLAS; the compiled fused loop exists for benchmarking
(``benchmarks/bench_kernels.py``).
"""
import os
from types import SimpleNamespace

from . import _pykernels


def _select():
    if os.environ.get("SEALTW_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        return _pykernels, "python"
    ns = SimpleNamespace(
        absorb=_ckernels.absorb,
        project_simplex_columns=_ckernels.project_simplex_columns,
        weighted_l1_cdist=_ckernels.weighted_l1_cdist,
        seal_batch=_pykernels.seal_batch,
    )
    return ns, "cython"


kernels, BACKEND = _select()


def num_threads():
    raw = os.environ.get("SEAL_TW_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)
