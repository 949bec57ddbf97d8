"""Kernel backend selection.

The compiled extension (``stseq.kernels._core``, Cython) is preferred; the
pure-numpy module ``stseq.kernels._numpy`` is the drop-in fallback. Set
``STSEQ_KERNELS=numpy`` to force the fallback or ``STSEQ_KERNELS=cython``
to make a missing extension a hard error. ``BACKEND`` names the active one.
"""

import os

_requested = os.environ.get("STSEQ_KERNELS", "auto")

if _requested not in ("auto", "cython", "numpy"):
    raise RuntimeError(f"STSEQ_KERNELS must be auto|cython|numpy, got {_requested!r}")

if _requested in ("auto", "cython"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from . import _numpy as _impl

        BACKEND = "numpy"
else:
    from . import _numpy as _impl

    BACKEND = "numpy"

gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
softmax_rows_fwd = _impl.softmax_rows_fwd
softmax_rows_bwd = _impl.softmax_rows_bwd
rmsnorm_fwd = _impl.rmsnorm_fwd
rmsnorm_bwd = _impl.rmsnorm_bwd
rope_fwd = _impl.rope_fwd
adam_step = _impl.adam_step
