"""Backend selection for the score-matching kernel.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` is used. Set ``RCDIFF_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    if os.environ.get("RCDIFF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"python": _kernels_py.dsm_loss_grad}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels.dsm_loss_grad

DEFAULT = "cython" if _ckernels is not None else "python"


def get(name: str | None = None):
    """Kernel for ``name`` (``"cython"`` or ``"python"``); ``None`` picks the default."""
    key = DEFAULT if name is None else name
    if key not in BACKENDS:
        raise ValueError(f"backend {key!r} unavailable; have {sorted(BACKENDS)}")
    return BACKENDS[key]
