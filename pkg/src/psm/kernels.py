"""Kernel backend chosen at import.

The compiled ``_kernels`` extension is used when it imports; setting
``PSM_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("PSM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
sampled_step = _impl.sampled_step
sync_rows = _impl.sync_rows
sync_all = _impl.sync_all
dual_gda = _impl.dual_gda


def backends() -> dict:
    """Every importable backend by name (the fallback is always present)."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
        found["cython"] = _kernels
    except ImportError:
        pass
    return found
