"""Kernel backend selection.

``RADLAB_BACKEND`` chooses the implementation of the hot kernels:

* ``numba`` -- jitted loop kernels (error if numba is missing)
* ``numpy`` -- pure-numpy im2col kernels (BLAS-backed)
* ``auto`` (default) -- numpy; on single-core hosts the BLAS matmul path
  outruns the jitted loops (see ``python -m radlab.benchmark``)
"""

import os

_requested = os.environ.get("RADLAB_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"RADLAB_BACKEND must be auto|numba|numpy, got {_requested!r}")

if _requested == "numba":
    from . import kernels_numba as _impl
    BACKEND = "numba"
else:
    from . import kernels_numpy as _impl
    BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernel = _impl.conv2d_backward_kernel
median_pool2d = _impl.median_pool2d
