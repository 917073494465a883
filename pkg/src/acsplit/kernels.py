"""Hot-loop kernels: compiled extension when available, numpy otherwise.

Set ``ACSPLIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
tridiag_substitute = _kernels_py.tridiag_substitute

if os.environ.get("ACSPLIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        tridiag_substitute = _compiled.tridiag_substitute
        BACKEND = "compiled"

__all__ = ["BACKEND", "tridiag_substitute"]
