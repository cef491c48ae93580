"""Neural-operator function interpolation and chart-residual completion."""

import ctypes
import os

__version__ = "0.1.0"

# Training allocates many short-lived MB-scale temporaries; keep glibc from
# serving them via mmap/munmap (a syscall pair per temporary, very expensive
# under sandboxed kernels). Threshold tuning only; semantics are unchanged.
try:
    _libc = ctypes.CDLL("libc.so.6")
    _libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    _libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
except OSError:  # pragma: no cover - non-glibc platform
    pass

# The hot GEMMs are small; BLAS thread pools lose more to synchronization
# than they gain. Honored only if numpy is not already loaded; override by
# exporting the variables yourself.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
