"""Hot-loop kernels: the compiled extension when built, numpy otherwise.

Set ``LMV_RPA_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("LMV_RPA_PURE") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

TIE_MODELS = {"against": 0, "for": 1, "priority": 2}

simulate_plurality = _impl.simulate_plurality
mix64 = _impl.mix64

__all__ = ["BACKEND", "TIE_MODELS", "mix64", "simulate_plurality"]
