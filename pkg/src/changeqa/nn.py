"""Plain numpy layers with explicit forward caches and hand-written backward.

Everything trains in float64. Layers store their parameter gradients on
themselves after backward(); the Adam optimizer walks (name, param, grad)
triples. No autograd anywhere: gradients are verified against finite
differences in the tests.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def depthwise_conv1d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-channel width-3 convolution along axis 1, zero same-padding.

    x: (B, L, D); kernel: (D, 3); bias: (D,). Non-causal: output at l sees
    l-1, l, l+1.
    """
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    out = (xp[:, :-2] * kernel[:, 0] + xp[:, 1:-1] * kernel[:, 1]
           + xp[:, 2:] * kernel[:, 2])
    return out + bias


def depthwise_conv1d_backward(dout: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Returns (dx, dkernel, dbias) for depthwise_conv1d."""
    dp = np.pad(dout, ((0, 0), (1, 1), (0, 0)))
    dx = (dp[:, 2:] * kernel[:, 0] + dp[:, 1:-1] * kernel[:, 1]
          + dp[:, :-2] * kernel[:, 2])
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    dkernel = np.stack([
        np.einsum("bld,bld->d", dout, xp[:, :-2]),
        np.einsum("bld,bld->d", dout, xp[:, 1:-1]),
        np.einsum("bld,bld->d", dout, xp[:, 2:]),
    ], axis=1)
    dbias = dout.sum(axis=(0, 1))
    return dx, dkernel, dbias


def _im2col(x: np.ndarray, ksize: int, pad: int) -> np.ndarray:
    """(B, C, H, W) -> (B, H*W, C*ksize*ksize) patches for stride-1 conv."""
    bsz, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (ksize, ksize), axis=(2, 3))  # (B,C,H,W,k,k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, h * w, c * ksize * ksize)


def _col2im(dcols: np.ndarray, x_shape: tuple, ksize: int, pad: int) -> np.ndarray:
    bsz, c, h, w = x_shape
    dxp = np.zeros((bsz, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    # one gather up front so every accumulation slice below is contiguous
    d6 = np.ascontiguousarray(
        dcols.reshape(bsz, h, w, c, ksize, ksize).transpose(4, 5, 0, 3, 1, 2))
    for i in range(ksize):
        for j in range(ksize):
            dxp[:, :, i:i + h, j:j + w] += d6[i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w]


class Conv2d:
    """3x3 stride-1 same-padded convolution via im2col."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        scale = np.sqrt(2.0 / (cin * 9))
        self.w = rng.normal(0.0, scale, size=(cout, cin, 3, 3))
        self.b = np.zeros(cout)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x_shape = None
        self._cols = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x_shape = x.shape
        bsz, _, h, w = x.shape
        # flat 2-D GEMMs: numpy's stacked matmul is several times slower
        self._cols = _im2col(x, 3, 1).reshape(bsz * h * w, -1)
        out = self._cols @ self.w.reshape(self.w.shape[0], -1).T
        out += self.b
        return out.reshape(bsz, h, w, -1).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        bsz, cout, h, w = dout.shape
        dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, cout)
        wflat = self.w.reshape(cout, -1)
        self.gw = (dflat.T @ self._cols).reshape(self.w.shape)
        self.gb = dflat.sum(axis=0)
        dcols = dflat @ wflat
        self._cols = None
        return _col2im(dcols, self._x_shape, 3, 1)


class BatchNorm2d:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[:, None, None]) * inv[:, None, None]
        self._cache = (xhat, inv, train)
        return self.gamma[:, None, None] * xhat + self.beta[:, None, None]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv, train = self._cache
        self._cache = None
        self.ggamma = np.einsum("bchw,bchw->c", dout, xhat)
        self.gbeta = dout.sum(axis=(0, 2, 3))
        g = self.gamma[:, None, None] * inv[:, None, None]
        if not train:
            return dout * g
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        mean_dout = dout.mean(axis=(0, 2, 3))[:, None, None]
        mean_dx = np.einsum("bchw,bchw->c", dout, xhat)[:, None, None] / m
        return g * (dout - mean_dout - xhat * mean_dx)


class MaxPool2x2:
    """2x2 max pooling, stride 2; gradient routes to the first argmax."""

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        bsz, c, h, w = x.shape
        blocks = x.reshape(bsz, c, h // 2, 2, w // 2, 2)
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h // 2, w // 2, 4)
        idx = flat.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, idx = self._cache
        self._cache = None
        bsz, c, h, w = x_shape
        dflat = np.zeros((bsz, c, h // 2, w // 2, 4))
        np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
        return dflat.reshape(bsz, c, h // 2, w // 2, 2, 2) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        mask = self._mask
        self._mask = None
        return dout * mask


class Linear:
    def __init__(self, din: int, dout: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        if zero_init:
            self.w = np.zeros((din, dout))
        else:
            self.w = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout))
        self.b = np.zeros(dout)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._x
        self._x = None
        xm = x.reshape(-1, x.shape[-1])
        dm = dout.reshape(-1, dout.shape[-1])
        self.gw = xm.T @ dm
        self.gb = dm.sum(axis=0)
        return dout @ self.w.T


def softmax_cross_entropy(logits: np.ndarray, gold: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits).

    Log-sum-exp form: finite for any finite logits, including float32.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    sumexp = expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    logp_gold = z[np.arange(n), gold] - np.log(sumexp[:, 0])
    loss = float(-np.mean(logp_gold))
    dlogits = expz / sumexp
    dlogits[np.arange(n), gold] -= 1.0
    return loss, dlogits / n


class Adam:
    """Adam with coupled L2 weight decay (decay added to the gradient)."""

    def __init__(self, params: list, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params  # list of (name, param_array, grad_getter)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p, _ in params}
        self.v = {name: np.zeros_like(p) for name, p, _ in params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p, grad_of in self.params:
            g = grad_of()
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
