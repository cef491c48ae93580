# cython: boundscheck=False, wraparound=False, cdivision=True, nonecheck=False
"""Fused hot-loop kernels: exact-erf GELU forward/backward and the AdamW update.

These dominate training time once matrix products are delegated to BLAS:
elementwise transcendentals and the optimizer update applied to one flat
parameter vector. The forward pass caches the Gaussian CDF so the backward
pass never re-evaluates erf.
"""

from libc.math cimport erf, exp, sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865475244
cdef double INV_SQRT_2PI = 0.3989422804014326779


def gelu_fwd(cnp.ndarray[cnp.float64_t, ndim=1] x):
    """Returns (gelu(x), Phi(x)); the CDF is cached for the backward pass."""
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] phi = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double v, p
    for i in range(n):
        v = x[i]
        p = 0.5 * (1.0 + erf(v * INV_SQRT2))
        phi[i] = p
        out[i] = v * p
    return out, phi


def gelu_bwd(cnp.ndarray[cnp.float64_t, ndim=1] x,
             cnp.ndarray[cnp.float64_t, ndim=1] phi,
             cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        out[i] = gy[i] * (phi[i] + v * exp(-0.5 * v * v) * INV_SQRT_2PI)
    return out


def adamw_update(cnp.ndarray[cnp.float64_t, ndim=1] p,
                 cnp.ndarray[cnp.float64_t, ndim=1] g,
                 cnp.ndarray[cnp.float64_t, ndim=1] m,
                 cnp.ndarray[cnp.float64_t, ndim=1] v,
                 double lr, double beta1, double beta2, double eps,
                 double weight_decay, long step):
    """In-place decoupled weight-decay Adam step with bias correction."""
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double shrink = 1.0 - lr * weight_decay
    cdef Py_ssize_t i
    cdef double gi, mh, vh
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        mh = m[i] / bc1
        vh = v[i] / bc2
        p[i] = shrink * p[i] - lr * mh / (sqrt(vh) + eps)
