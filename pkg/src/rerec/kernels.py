"""Kernel backend selection.

The compiled extension is used when it imports; set ``REREC_KERNELS=python``
to force the numpy fallback (``compiled`` makes a missing extension an error).
"""
import os

from . import _pykernels

_choice = os.environ.get("REREC_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _pykernels

BACKEND = _impl.BACKEND
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
mf_sgd_epoch = _impl.mf_sgd_epoch


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"compiled"``."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
