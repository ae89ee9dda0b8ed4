"""Numba import shim: pins the threading layer and silences the TBB probe."""
import os
import warnings

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
warnings.filterwarnings("ignore", message=".*TBB.*")

import numba  # noqa: E402
from numba import njit, prange  # noqa: E402

# fastmath subset that lets LLVM vectorise reductions; the lane order is fixed by
# the compiled loop, never by the thread count.
REDUCE_FLAGS = {"reassoc", "nsz", "contract"}


def set_threads(n):
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


__all__ = ["numba", "njit", "prange", "REDUCE_FLAGS", "set_threads"]
