"""Pure-numpy fallback for the fused kernels in ``_kernels.pyx``.

Same contracts and the same numerics (the Gaussian CDF is evaluated in
double precision on both sides); only the temporaries differ.
``tests/test_backend.py`` asserts agreement.
"""

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 0.3989422804014326779


def gelu_fwd(x):
    """Returns (gelu(x), Phi(x)); the CDF is cached for the backward pass."""
    phi = ndtr(x)
    return x * phi, phi


def gelu_bwd(x, phi, gy):
    return gy * (phi + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI)


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mh = m / (1.0 - beta1 ** step)
    vh = v / (1.0 - beta2 ** step)
    p *= 1.0 - lr * weight_decay
    p -= lr * mh / (np.sqrt(vh) + eps)
