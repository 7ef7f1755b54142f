"""Backend dispatch for the hot scoring kernels.

The numba backend is used by default. Set ``SEARCHTUNE_NUMBA=0`` (or
``off``/``false``) to force the pure-NumPy fallback; the fallback is also
selected automatically when numba cannot be imported. Both backends are
numerically equivalent (see tests/test_kernels.py) and
benchmarks/bench_kernels.py compares their throughput.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import numpy_backend

_KERNEL_NAMES = (
    "bm25_accumulate",
    "blend_scores",
    "topk_desc",
    "ranking_stats",
    "tgm_logpdf",
)


def _numba_disabled() -> bool:
    return os.environ.get("SEARCHTUNE_NUMBA", "").strip().lower() in ("0", "off", "false", "numpy")


def _load_backend() -> tuple[str, ModuleType]:
    if not _numba_disabled():
        try:
            from . import numba_backend

            return "numba", numba_backend
        except ImportError:
            pass
    return "numpy", numpy_backend


BACKEND, _impl = _load_backend()

bm25_accumulate = _impl.bm25_accumulate
blend_scores = _impl.blend_scores
topk_desc = _impl.topk_desc
ranking_stats = _impl.ranking_stats
tgm_logpdf = _impl.tgm_logpdf


def available_backends() -> tuple[str, ...]:
    try:
        from . import numba_backend  # noqa: F401

        return ("numba", "numpy")
    except ImportError:
        return ("numpy",)


def get_backend(name: str) -> ModuleType:
    """Return a backend module by name (for tests and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def warmup() -> str:
    """Trigger JIT compilation of every kernel so later calls are not skewed."""
    import numpy as np

    scores = np.array([0.3, 0.9, 0.1], dtype=np.float64)
    bm25_accumulate(
        3,
        np.array([0, 2], dtype=np.int64),
        np.array([0, 2], dtype=np.int64),
        np.array([1.0, 2.0], dtype=np.float64),
        np.array([1.5], dtype=np.float64),
        np.ones(3, dtype=np.float64),
    )
    blend_scores(np.ones((3, 2), dtype=np.float64), np.array([0.5, 0.5]), True)
    blend_scores(np.ones((3, 2), dtype=np.float64), np.array([0.5, 0.5]), False)
    ranked = topk_desc(scores, 2)
    ranking_stats(ranked, scores, np.array([1.0, 0.0, 1.0]), np.array([2], dtype=np.int64))
    tgm_logpdf(np.array([0.5]), np.array([0.4, 0.6]), 0.1, 0.0, 1.0)
    return BACKEND


__all__ = [
    "BACKEND",
    "available_backends",
    "get_backend",
    "warmup",
    *_KERNEL_NAMES,
]
