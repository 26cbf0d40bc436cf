"""Hot-kernel selection: compiled Cython extension when available, numpy otherwise.

Set VSTAB_NO_EXT=1 to force the numpy fallback (used by the benchmark and by
tests that compare the two paths).
"""

import os

from . import _jac_np

if os.environ.get("VSTAB_NO_EXT") == "1":
    _impl = _jac_np
else:
    try:
        from . import _jac_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _jac_np

dSbus_dV = _impl.dSbus_dV
IMPLEMENTATION = _impl.IMPLEMENTATION

__all__ = ["dSbus_dV", "IMPLEMENTATION"]
