"""Minimal CPU layer framework with explicit forward caches and hand-written
backward passes.

Weights are stored float32 (the checkpoint dtype); activations and gradients
are computed in float64 so gradient checks and re-runs are exact. Every layer
is stateless across calls: forward returns (output, cache) and backward
consumes the cache, so a model instance can serve concurrent inferences.

Rectifier backward supports a gated mode used by guided backpropagation: the
incoming gradient is additionally zeroed where it is negative, on top of the
usual forward-activation gate.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32
F64 = np.float64


class Param:
    """A named weight array (float32) with room for an accumulated gradient."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=F32)


class Layer:
    """Base layer: subclasses implement forward/backward; params default empty."""

    def params(self) -> list[Param]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        raise NotImplementedError


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """(N,C,H,W) -> columns (N, oh, ow, C, k, k) as a strided view."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, oh, ow, k, k)
    return np.transpose(windows, (0, 2, 3, 1, 4, 5))


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int):
    """Scatter-add column gradients back to the (padded) input layout."""
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=F64)
    _, oh, ow, _, _, _ = dcols.shape
    d = np.transpose(dcols, (0, 3, 1, 2, 4, 5))  # (N, C, oh, ow, k, k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += d[
                :, :, :, :, i, j
            ]
    if pad:
        dx = dx[:, :, pad : h + pad, pad : w + pad]
    return dx


class Conv2d(Layer):
    """3x3/7x7/1x1 convolution via im2col; padding k//2 keeps 'same' geometry."""

    def __init__(self, name: str, cin: int, cout: int, k: int, stride: int = 1, rng=None):
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.pad = k // 2
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (cin * k * k))
        self.w = Param(f"{name}.w", rng.normal(0.0, std, size=(cout, cin, k, k)))
        self.b = Param(f"{name}.b", np.zeros(cout))

    def params(self):
        return [self.w, self.b]

    def out_hw(self, h: int, w: int):
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        return oh, ow

    def forward(self, x):
        x = np.asarray(x, dtype=F64)
        n, _, h, w = x.shape
        cols = _im2col(x, self.k, self.stride, self.pad)
        oh, ow = cols.shape[1], cols.shape[2]
        flat = cols.reshape(n * oh * ow, -1)
        wmat = self.w.value.astype(F64).reshape(self.cout, -1)
        y = flat @ wmat.T + self.b.value.astype(F64)
        y = y.reshape(n, oh, ow, self.cout).transpose(0, 3, 1, 2)
        return y, (x.shape, flat, (n, oh, ow))

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        x_shape, flat, (n, oh, ow) = cache
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, self.cout)
        grads = None
        if need_param_grads:
            dw = (dy_flat.T @ flat).reshape(self.w.value.shape)
            db = dy_flat.sum(axis=0)
            grads = {self.w.name: dw, self.b.name: db}
        wmat = self.w.value.astype(F64).reshape(self.cout, -1)
        dcols = (dy_flat @ wmat).reshape(n, oh, ow, self.cin, self.k, self.k)
        dx = _col2im(dcols, x_shape, self.k, self.stride, self.pad)
        return dx, grads


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        dx = dy * cache
        if guided:
            dx = dx * (dy > 0)
        return dx, None


class GlobalAvgPool(Layer):
    """(N, C, H, W) -> (N, C) spatial mean."""

    def forward(self, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        n, c, h, w = cache
        dx = np.broadcast_to(dy[:, :, None, None], (n, c, h, w)) / (h * w)
        return np.ascontiguousarray(dx), None


class Dense(Layer):
    def __init__(self, name: str, din: int, dout: int, rng=None):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / din)
        self.w = Param(f"{name}.w", rng.normal(0.0, std, size=(dout, din)))
        self.b = Param(f"{name}.b", np.zeros(dout))

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=F64)
        y = x @ self.w.value.astype(F64).T + self.b.value.astype(F64)
        return y, x

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        x = cache
        grads = None
        if need_param_grads:
            grads = {self.w.name: dy.T @ x, self.b.name: dy.sum(axis=0)}
        dx = dy @ self.w.value.astype(F64)
        return dx, grads


class L2Normalize(Layer):
    """Row-wise x / ||x||; backward applies the projection Jacobian."""

    def __init__(self, eps: float = 1e-12):
        self.eps = eps

    def forward(self, x):
        norms = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), self.eps)
        y = x / norms
        return y, (y, norms)

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        y, norms = cache
        dx = (dy - y * np.sum(dy * y, axis=1, keepdims=True)) / norms
        return dx, None


class Residual(Layer):
    """Bottleneck residual block: 1x1 -> 3x3(stride) -> 1x1 plus projected skip."""

    def __init__(self, name: str, cin: int, cmid: int, cout: int, stride: int, rng=None):
        self.conv1 = Conv2d(f"{name}.conv1", cin, cmid, 1, 1, rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(f"{name}.conv2", cmid, cmid, 3, stride, rng)
        self.relu2 = ReLU()
        self.conv3 = Conv2d(f"{name}.conv3", cmid, cout, 1, 1, rng)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = Conv2d(f"{name}.proj", cin, cout, 1, stride, rng)
        self.relu_out = ReLU()

    def params(self):
        layers = [self.conv1, self.conv2, self.conv3]
        if self.proj is not None:
            layers.append(self.proj)
        return [p for layer in layers for p in layer.params()]

    def forward(self, x):
        y1, c1 = self.conv1.forward(x)
        a1, m1 = self.relu1.forward(y1)
        y2, c2 = self.conv2.forward(a1)
        a2, m2 = self.relu2.forward(y2)
        y3, c3 = self.conv3.forward(a2)
        if self.proj is not None:
            skip, cp = self.proj.forward(x)
        else:
            skip, cp = x, None
        out, mo = self.relu_out.forward(y3 + skip)
        return out, (c1, m1, c2, m2, c3, cp, mo)

    def backward(self, cache, dy, guided=False, need_param_grads=False):
        c1, m1, c2, m2, c3, cp, mo = cache
        grads = {} if need_param_grads else None
        d_sum, _ = self.relu_out.backward(mo, dy, guided)
        d3, g3 = self.conv3.backward(c3, d_sum, guided, need_param_grads)
        d2a, _ = self.relu2.backward(m2, d3, guided)
        d2, g2 = self.conv2.backward(c2, d2a, guided, need_param_grads)
        d1a, _ = self.relu1.backward(m1, d2, guided)
        d1, g1 = self.conv1.backward(c1, d1a, guided, need_param_grads)
        if self.proj is not None:
            dskip, gp = self.proj.backward(cp, d_sum, guided, need_param_grads)
        else:
            dskip, gp = d_sum, None
        if need_param_grads:
            for g in (g1, g2, g3, gp):
                if g:
                    grads.update(g)
        return d1 + dskip, grads


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dy, guided=False, need_param_grads=False):
        grads = {} if need_param_grads else None
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(cache, dy, guided, need_param_grads)
            if need_param_grads and g:
                grads.update(g)
        return dy, grads
