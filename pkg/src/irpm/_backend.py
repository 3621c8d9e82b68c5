"""Kernel backend selection.

The compiled extension is preferred; ``IRPM_BACKEND=python`` forces the numpy
fallback and ``IRPM_BACKEND=cython`` makes a missing extension an error.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

AVAILABLE: tuple[str, ...] = ("cython", "python") if _compiled is not None else ("python",)

kernels: ModuleType = _kernels_py
name = "python"


def set_backend(which: str) -> None:
    """Switch the active kernel module (``"cython"`` or ``"python"``)."""
    global kernels, name
    if which == "python":
        kernels, name = _kernels_py, "python"
    elif which == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        kernels, name = _compiled, "cython"
    else:
        raise ValueError(f"unknown backend {which!r}")


_requested = os.environ.get("IRPM_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
elif _compiled is not None:
    set_backend("cython")
else:
    log.debug("compiled kernels unavailable; using numpy fallback")
