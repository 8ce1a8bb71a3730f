"""Minimal dense-array engine used by every other module.

Arrays are plain numpy ndarrays in float32 (production) or float64
(verification).  The convolution and Frobenius kernels run either as a
compiled Cython extension or as pure-Python reference code; the backend
is chosen once at import.  Both backends accumulate in float64 over the
same index order, so they are bit-identical and every operation is
reproducible for fixed inputs.

Set ``DYNREP_KERNELS=python`` or ``DYNREP_KERNELS=compiled`` to force a
backend (the latter raises if the extension was never built).
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_FORCED = os.environ.get("DYNREP_KERNELS", "").strip().lower()
if _FORCED == "python":
    _kernels = _pykernels
elif _FORCED == "compiled":
    if _ckernels is None:
        raise ImportError(
            "DYNREP_KERNELS=compiled but the extension is not built; "
            "run `python setup.py build_ext --inplace` first"
        )
    _kernels = _ckernels
elif _FORCED:
    raise ValueError(f"DYNREP_KERNELS must be 'python' or 'compiled', got {_FORCED!r}")
else:
    _kernels = _ckernels if _ckernels is not None else _pykernels

DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32


def kernel_backend():
    """Name of the kernel backend selected at import: 'compiled' or 'python'."""
    return "compiled" if _kernels is not _pykernels else "python"


def get_kernels(backend=None):
    """Raw kernel module for a backend name (used by parity tests and benchmarks)."""
    if backend is None:
        return _kernels
    if backend == "python":
        return _pykernels
    if backend == "compiled":
        if _ckernels is None:
            raise ValueError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")


def make_rng(seed):
    """Deterministic generator (PCG64); identical seed gives an identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


def child_rng(seed, *keys):
    """Generator derived from (seed, *keys); independent of spawn order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def _as_array(name, a):
    a = np.asarray(a)
    if a.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise TypeError(f"{name} must be float32 or float64, got {a.dtype}")
    return np.ascontiguousarray(a)


def frobenius_inner(a, b):
    """Sum of the elementwise product, accumulated left to right in float64.

    Raises on shape mismatch, naming both shapes.
    """
    a = _as_array("a", a)
    b = _as_array("b", b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: a has shape {a.shape}, b has shape {b.shape}")
    if a.dtype != b.dtype:
        b = b.astype(a.dtype)
    return float(_kernels.frobenius_inner_flat(a.ravel(), b.ravel()))


def _check_conv_args(x, kernels, stride, padding):
    if x.ndim != 3:
        raise ValueError(f"input must be CxHxW, got shape {x.shape}")
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be OxIxKhxKw, got shape {kernels.shape}")
    if x.shape[0] != kernels.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]} channels, "
            f"kernels expect {kernels.shape[1]}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    kh, kw = kernels.shape[2], kernels.shape[3]
    hp, wp = x.shape[1] + 2 * padding, x.shape[2] + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"kernel extent {kh}x{kw} exceeds padded input extent {hp}x{wp}"
        )


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, kernels, stride=1, padding=0):
    """2-D cross-correlation of a CxHxW input with OxIxKhxKw kernels."""
    x = _as_array("input", x)
    kernels = _as_array("kernels", kernels)
    _check_conv_args(x, kernels, stride, padding)
    if kernels.dtype != x.dtype:
        kernels = kernels.astype(x.dtype)
    xpad = _pad(x, padding)
    kh, kw = kernels.shape[2], kernels.shape[3]
    ho = (xpad.shape[1] - kh) // stride + 1
    wo = (xpad.shape[2] - kw) // stride + 1
    out = np.empty((kernels.shape[0], ho, wo), dtype=x.dtype)
    _kernels.conv2d_forward_core(xpad, kernels, out, stride)
    return out


def conv2d_backward(x, kernels, grad_output, stride=1, padding=0):
    """Exact gradients (grad_input, grad_kernels) for conv2d_forward.

    grad_input is the transposed convolution of grad_output with the
    kernels; no separate operation is exposed for it.
    """
    x = _as_array("input", x)
    kernels = _as_array("kernels", kernels)
    grad_output = _as_array("grad_output", grad_output)
    _check_conv_args(x, kernels, stride, padding)
    if kernels.dtype != x.dtype:
        kernels = kernels.astype(x.dtype)
    if grad_output.dtype != x.dtype:
        grad_output = grad_output.astype(x.dtype)
    xpad = _pad(x, padding)
    kh, kw = kernels.shape[2], kernels.shape[3]
    ho = (xpad.shape[1] - kh) // stride + 1
    wo = (xpad.shape[2] - kw) // stride + 1
    if grad_output.shape != (kernels.shape[0], ho, wo):
        raise ValueError(
            f"grad_output shape {grad_output.shape} does not match "
            f"forward output shape {(kernels.shape[0], ho, wo)}"
        )
    gx64 = np.zeros(xpad.shape, dtype=np.float64)
    _kernels.conv2d_grad_input_core(kernels, grad_output, gx64, stride)
    gk64 = np.zeros(kernels.shape, dtype=np.float64)
    _kernels.conv2d_grad_kernels_core(xpad, grad_output, gk64, stride)
    if padding:
        gx64 = gx64[:, padding:-padding, padding:-padding]
    return gx64.astype(x.dtype), gk64.astype(x.dtype)


def avgpool2_forward(x):
    """2x2 average pooling with stride 2; H and W must be even."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even spatial extents, got {h}x{w}")
    quarter = x.dtype.type(0.25)
    return (x[:, 0::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 0::2] + x[:, 1::2, 1::2]) * quarter


def avgpool2_backward(grad_output):
    quarter = grad_output.dtype.type(0.25)
    g = grad_output * quarter
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)


def upsample2_forward(x):
    """Nearest-neighbor 2x upsampling."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(grad_output):
    g = grad_output
    return (g[:, 0::2, 0::2] + g[:, 0::2, 1::2] + g[:, 1::2, 0::2] + g[:, 1::2, 1::2])


def leaky_relu_forward(x, alpha):
    return np.where(x >= 0, x, x.dtype.type(alpha) * x)


def leaky_relu_backward(x, grad_output, alpha):
    return np.where(x >= 0, grad_output, grad_output.dtype.type(alpha) * grad_output)


def finite_diff_check(f, x, analytic_grad, h=1e-5):
    """Worst relative error between central differences of f and analytic_grad.

    The denominator is max(|analytic|, |numeric|, 1e-12) per element.
    Raises if f evaluates to a non-finite value or h <= 0.
    """
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(
            f"shape mismatch: x has shape {x.shape}, analytic_grad has shape {analytic.shape}"
        )
    worst = 0.0
    xp = x.copy()
    for i in range(x.size):
        orig = xp.flat[i]
        xp.flat[i] = orig + h
        fp = float(f(xp))
        xp.flat[i] = orig - h
        fm = float(f(xp))
        xp.flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"f returned a non-finite value at element {i}")
        numeric = (fp - fm) / (2.0 * h)
        ana = analytic.flat[i]
        err = abs(numeric - ana) / max(abs(ana), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
