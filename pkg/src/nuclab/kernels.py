"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``NUCLAB_PURE_PYTHON=1`` is set, the numpy fallback is
used.  ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import _kernels_py

_pure = os.environ.get("NUCLAB_PURE_PYTHON", "") not in ("", "0")

try:
    if _pure:
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

smoothstep_cutoff = _impl.smoothstep_cutoff
lens_tail_inner = _impl.lens_tail_inner
laplace_apply = _impl.laplace_apply


def backends() -> dict:
    """All importable backends by name, for parity tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
