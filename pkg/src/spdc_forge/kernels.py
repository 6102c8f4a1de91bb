"""Backend selection for the numerical kernels.

The compiled extension is preferred; set ``SPDC_FORGE_BACKEND=python`` to
force the numpy fallback (the benchmark and the parity tests do this).
"""

import os

from . import _pykernels

_requested = os.environ.get("SPDC_FORGE_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

permanent = _impl.permanent
pmf_sum = _impl.pmf_sum
track_signs = _impl.track_signs
pmf_sum_lattice = _impl.pmf_sum_lattice

python_backend = _pykernels
