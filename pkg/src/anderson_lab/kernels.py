"""Kernel backend selection.

The compiled extension ``anderson_lab._ckernels`` is used when it was built and
imports cleanly; otherwise the numpy fallback in ``_pykernels`` is used.  Set
``ANDERSON_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("ANDERSON_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

stencil_matvec = _impl.stencil_matvec
sturm_count = _impl.sturm_count

__all__ = ["BACKEND", "stencil_matvec", "sturm_count"]
