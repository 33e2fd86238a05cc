"""Hot loop kernels: compiled when the extension is built, numpy otherwise.

Set ``MATCHKIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels as python

try:
    if os.environ.get("MATCHKIT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

backend = compiled if compiled is not None else python
BACKEND_NAME = "cython" if compiled is not None else "python"

greedy_nms = backend.greedy_nms
count_pairs_within = backend.count_pairs_within
hamming_matrix = backend.hamming_matrix
local_max_2d = backend.local_max_2d
extrema_3d = backend.extrema_3d

__all__ = [
    "BACKEND_NAME",
    "compiled",
    "python",
    "greedy_nms",
    "count_pairs_within",
    "hamming_matrix",
    "local_max_2d",
    "extrema_3d",
]
