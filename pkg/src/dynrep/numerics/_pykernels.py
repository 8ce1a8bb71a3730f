"""Pure-Python reference kernels, bit-identical to the compiled backend.

Each reduction accumulates in float64 over exactly the same index
sequence as the corresponding loop in ``_ckernels``; ``np.cumsum`` is
used where a strict left-to-right sum must stay vectorized.
"""

import numpy as np


def frobenius_inner_flat(a, b):
    if a.size == 0:
        return 0.0
    prod = a.astype(np.float64) * b.astype(np.float64)
    return float(np.cumsum(prod)[-1])


def conv2d_forward_core(xpad, k, out, stride):
    cout, cin, kh, kw = k.shape
    ho, wo = out.shape[1], out.shape[2]
    x64 = xpad.astype(np.float64)
    k64 = k.astype(np.float64)
    for co in range(cout):
        acc = np.zeros((ho, wo), dtype=np.float64)
        for ci in range(cin):
            for ki in range(kh):
                for kj in range(kw):
                    acc += k64[co, ci, ki, kj] * x64[
                        ci,
                        ki : ki + (ho - 1) * stride + 1 : stride,
                        kj : kj + (wo - 1) * stride + 1 : stride,
                    ]
        out[co] = acc.astype(out.dtype)


def conv2d_grad_input_core(k, gy, gx, stride):
    cout, cin, kh, kw = k.shape
    ho, wo = gy.shape[1], gy.shape[2]
    k64 = k.astype(np.float64)
    gy64 = gy.astype(np.float64)
    for co in range(cout):
        for ki in range(kh):
            for kj in range(kw):
                gx[
                    :,
                    ki : ki + (ho - 1) * stride + 1 : stride,
                    kj : kj + (wo - 1) * stride + 1 : stride,
                ] += k64[co, :, ki, kj, None, None] * gy64[co]


def conv2d_grad_kernels_core(xpad, gy, gk, stride):
    cout, cin, kh, kw = gk.shape
    ho, wo = gy.shape[1], gy.shape[2]
    x64 = xpad.astype(np.float64)
    gy64 = gy.astype(np.float64)
    for co in range(cout):
        g = gy64[co]
        for ci in range(cin):
            for ki in range(kh):
                for kj in range(kw):
                    prod = g * x64[
                        ci,
                        ki : ki + (ho - 1) * stride + 1 : stride,
                        kj : kj + (wo - 1) * stride + 1 : stride,
                    ]
                    gk[co, ci, ki, kj] = np.cumsum(prod.ravel())[-1]
