"""Kernel backend selection.

The compiled Cython module is used when it was built and imports cleanly.
Set ``NUDGE3D_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from nudge3d import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("NUDGE3D_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from nudge3d import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

cross = _impl.cross
project = _impl.project
curl = _impl.curl
if_stage = _impl.if_stage
block_mean = _impl.block_mean


def backend_module(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from nudge3d import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
