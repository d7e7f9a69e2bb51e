"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Set ``OTCYCLE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
lap_solve = _fallback.lap_solve
pairwise_distance_sum = _fallback.pairwise_distance_sum

if os.environ.get("OTCYCLE_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        lap_solve = _kernels.lap_solve
        pairwise_distance_sum = _kernels.pairwise_distance_sum
