"""Select the k-NN query kernel at import time.

The compiled extension is used when it was built; otherwise the pure-Python
kernel takes over. Set ``NNRDIV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kdtree_py

if os.environ.get("NNRDIV_PURE_PYTHON", "") not in ("", "0"):
    query_batch = _kdtree_py.query_batch
    BACKEND = "python"
else:
    try:
        from ._kdtree import query_batch
        BACKEND = "compiled"
    except ImportError:  # extension not built
        query_batch = _kdtree_py.query_batch
        BACKEND = "python"

KERNELS = {"python": _kdtree_py.query_batch}
try:
    from ._kdtree import query_batch as _compiled
    KERNELS["compiled"] = _compiled
except ImportError:
    pass
