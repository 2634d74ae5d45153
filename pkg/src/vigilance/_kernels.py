"""Select the kernel backend at import time.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy fallback in ``_pykernels`` is loaded. Set ``VIGILANCE_BACKEND=python``
to force the fallback.
"""

import os

from . import _pykernels

_forced = os.environ.get("VIGILANCE_BACKEND", "").lower()

kernels = _pykernels
if _forced != "python":
    try:
        from . import _ckernels as kernels  # noqa: F811
    except ImportError:
        if _forced == "cython":
            raise

BACKEND = kernels.BACKEND


def available_backends() -> dict:
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
