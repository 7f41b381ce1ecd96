"""Kernel backend selection.

The compiled extension is preferred when present; the numpy backend is a
drop-in replacement.  Set ROBUST_PLL_PURE_PYTHON=1 to force the fallback
(used by the benchmark and the parity tests).
"""

import os

from . import numpy_backend

if os.environ.get("ROBUST_PLL_PURE_PYTHON") == "1":
    _impl = numpy_backend
    HAVE_COMPILED = False
else:
    try:
        from . import _evidential as _impl

        HAVE_COMPILED = True
    except ImportError:
        _impl = numpy_backend
        HAVE_COMPILED = False

BACKEND = _impl.BACKEND

digamma = _impl.digamma
trigamma = _impl.trigamma
log_gamma = _impl.log_gamma
sq_loss_terms = _impl.sq_loss_terms
sq_loss_value_grad = _impl.sq_loss_value_grad
kl_value = _impl.kl_value
kl_value_grad = _impl.kl_value_grad
ce_loss_value_grad = _impl.ce_loss_value_grad
mse_weight_update = _impl.mse_weight_update


def get_backend(name):
    """Return a backend module by name ("numpy" or "compiled")."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        from . import _evidential

        return _evidential
    raise ValueError(f"unknown backend {name!r}")
