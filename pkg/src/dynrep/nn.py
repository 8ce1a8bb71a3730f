"""Convolutional building blocks with explicit gradients, plus Adam.

Layers hold parameters and accumulated gradients; the models in
`drnet` and `mdr` wire them into fixed graphs and write their own
backward passes.  All updates are elementwise and ordered, so training
is deterministic for a fixed seed.
"""

import numpy as np

from . import numerics


class Conv2d:
    """3x3 (by default) convolution with bias, stride 1, same padding."""

    def __init__(self, in_channels, out_channels, kernel_size=3, padding=None,
                 rng=None, zero_init=False, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2 if padding is None else padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            self.w = np.zeros(shape, dtype=dtype)
        else:
            fan_in = in_channels * kernel_size * kernel_size
            std = np.sqrt(2.0 / fan_in)
            self.w = (std * rng.standard_normal(shape)).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def forward(self, x):
        out = numerics.conv2d_forward(x, self.w, stride=1, padding=self.padding)
        return out + self.b[:, None, None]

    def backward(self, x, grad_out):
        """Accumulate parameter gradients and return the input gradient."""
        self.gb += grad_out.sum(axis=(1, 2))
        gx, gk = numerics.conv2d_backward(x, self.w, grad_out, stride=1, padding=self.padding)
        self.gw += gk
        return gx

    def zero_grad(self):
        self.gw[:] = 0
        self.gb[:] = 0

    def param_pairs(self):
        return [(self.w, self.gw), (self.b, self.gb)]


class Linear:
    def __init__(self, in_features, out_features, rng=None, zero_init=False, dtype=np.float32):
        if zero_init:
            self.w = np.zeros((out_features, in_features), dtype=dtype)
        else:
            std = np.sqrt(1.0 / in_features)
            self.w = (std * rng.standard_normal((out_features, in_features))).astype(dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def forward(self, x):
        return self.w @ x + self.b

    def backward(self, x, grad_out):
        self.gw += np.outer(grad_out, x)
        self.gb += grad_out
        return self.w.T @ grad_out

    def zero_grad(self):
        self.gw[:] = 0
        self.gb[:] = 0

    def param_pairs(self):
        return [(self.w, self.gw), (self.b, self.gb)]


class Adam:
    """Adam over a fixed list of (param, grad) array pairs, updated in place."""

    def __init__(self, param_pairs, learning_rate=1e-3, betas=(0.5, 0.9), eps=1e-8):
        self.pairs = list(param_pairs)
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p, _ in self.pairs]
        self.v = [np.zeros_like(p) for p, _ in self.pairs]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for i, (p, g) in enumerate(self.pairs):
            g64 = g.astype(np.float64)
            self.m[i] = (b1 * self.m[i].astype(np.float64) + (1.0 - b1) * g64).astype(p.dtype)
            self.v[i] = (b2 * self.v[i].astype(np.float64) + (1.0 - b2) * g64 * g64).astype(p.dtype)
            m_hat = self.m[i].astype(np.float64) / bias1
            v_hat = self.v[i].astype(np.float64) / bias2
            p -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)
