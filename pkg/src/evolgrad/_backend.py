"""Select the sweep kernel at import time.

The compiled extension is used when it was built; set
``EVOLGRAD_PURE_PYTHON=1`` to force the scipy-based fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _sweeps_py

try:
    from . import _sweeps as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _sweeps_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if os.environ.get("EVOLGRAD_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    NAME = "python"
else:
    NAME = "cython"

kernel: ModuleType = BACKENDS[NAME]


def get(name: str | None = None) -> ModuleType:
    """Return the named backend (default: the one selected at import)."""
    if name is None:
        return kernel
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} is not available; have {sorted(BACKENDS)}") from None
