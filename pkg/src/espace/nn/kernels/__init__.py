"""Training hot kernels: compiled extension when available, numpy fallback otherwise.

Set ESPACE_PURE_PYTHON=1 to force the numpy implementations (used by the
benchmark and by tests that compare the two backends).
"""

import os

from . import _ref

try:
    from . import _fastops
except ImportError:
    _fastops = None

if os.environ.get("ESPACE_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _ref
elif _fastops is not None:
    _impl = _fastops
else:
    _impl = _ref

BACKEND = "compiled" if _impl is _fastops and _fastops is not None else "numpy"

pool_forward = _impl.pool_forward
pool_backward = _impl.pool_backward
adam_dense = _impl.adam_dense
adam_rows = _impl.adam_rows
