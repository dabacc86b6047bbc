"""Select the flow kernels at import time.

The compiled extension is used when it was built; setting
``KAHLERLAB_PURE_PYTHON=1`` forces the NumPy/SciPy fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("KAHLERLAB_PURE_PYTHON", "") != "1":
    try:
        from . import _core as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py

OK, NEWTON_FAILED, LOST_CONVEXITY = 0, 1, 2

krf_step = _impl.krf_step
krf_advance = _impl.krf_advance
monitors = _impl.monitors
thomas = _impl.thomas


def backends():
    """Available implementations by name (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out
