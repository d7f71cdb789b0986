"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

Set ``REFUSE_DISABLE_NUMBA=1`` before import to force the numpy path.
Both backends expose the same functions; each is deterministic on its own,
but they are not guaranteed to agree to the last bit with each other.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_DISABLED = os.environ.get("REFUSE_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not NUMBA_DISABLED

if USE_NUMBA:
    from . import _numba as backend
else:
    from . import _numpy as backend

BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(fn):
    """``numba.njit(cache=True)`` when the numba backend is active, else identity."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def set_threads(n: int) -> None:
    if USE_NUMBA and n and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


token_tables = backend.token_tables
gated_pool_forward = backend.gated_pool_forward
gated_pool_backward = backend.gated_pool_backward
mine_triplets = backend.mine_triplets
cosine_distances_to = backend.cosine_distances_to
exact_knn_all = backend.exact_knn_all
first_correct_rank_all = backend.first_correct_rank_all

__all__ = [
    "BACKEND",
    "USE_NUMBA",
    "jit",
    "set_threads",
    "token_tables",
    "gated_pool_forward",
    "gated_pool_backward",
    "mine_triplets",
    "cosine_distances_to",
    "exact_knn_all",
    "first_correct_rank_all",
]
