"""Hot inner loops with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise, or
when ``PPGVC_PURE_PYTHON=1`` is set, the numpy versions in ``_pykernels`` are
selected.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("PPGVC_PURE_PYTHON") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "numpy"

nccf = _impl.nccf
overlap_add = _impl.overlap_add
pulse_epochs = _impl.pulse_epochs

__all__ = ["BACKEND", "nccf", "overlap_add", "pulse_epochs"]
