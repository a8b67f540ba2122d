"""Kernel backend selection.

The compiled extension `_kernels_cy` is used when it has been built;
otherwise the pure-numpy module `_kernels_py` serves as a drop-in
fallback. Set PEMPC_PURE_PYTHON=1 to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("PEMPC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

basis_values = _impl.basis_values
basis_jacobians = _impl.basis_jacobians
step_eval = _impl.step_eval
rollout = _impl.rollout
rollout_with_jacobians = _impl.rollout_with_jacobians


def available_backends():
    """Name -> module for every kernel backend importable right now."""
    backends = {"python": _kernels_py}
    try:
        from . import _kernels_cy

        backends["cython"] = _kernels_cy
    except ImportError:
        pass
    return backends
