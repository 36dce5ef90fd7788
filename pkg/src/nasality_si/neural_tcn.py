"""Dilated temporal convolutional network, written directly on numpy.

Stack (all convolutions stride 1, "same" zero padding, BN + ReLU after each
conv except the head)::

    C1 1x1 -> C2 1x1 -> d1 k3/dil1 -> d2 k3/dil4 -> d3 k3/dil16
    -> C3 1x1 -> C4 k3 -> upsample x4 -> C5 1x1 -> avgpool 5 -> tanh

Activations are held internally as ``(channels, batch, time)`` so that every
convolution is a single GEMM over ``batch*time`` columns.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 128
    pre_filters: int = 128
    dilated_filters: int = 256
    dilations: tuple = (1, 4, 16)
    kernel_dilated: int = 3
    upsample_factor: int = 4
    pool_window: int = 5
    n_targets: int = 5
    precision: str = "f32"
    seed: int = 7
    t_in: int = 250
    t_out: int = 200

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")
        if self.t_in * self.upsample_factor != self.t_out * self.pool_window:
            raise ValueError("upsample/pool factors must map t_in onto t_out exactly")
        if not self.dilations or any(d < 1 for d in self.dilations) or \
                list(self.dilations) != sorted(self.dilations):
            raise ValueError("dilations must be positive and ascending")
        if self.kernel_dilated % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        for name in ("in_channels", "pre_filters", "dilated_filters", "n_targets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        if "dilations" in d:
            d["dilations"] = tuple(d["dilations"])
        return cls(**d)


class Conv1d:
    def __init__(self, name, cin, cout, k=1, dilation=1):
        self.name, self.cin, self.cout, self.k, self.dil = name, cin, cout, k, dilation
        self.pad = dilation * (k - 1) // 2
        self.param_names = (f"{name}.weight", f"{name}.bias")

    def init(self, rng, dtype):
        bound = 1.0 / np.sqrt(self.cin * self.k)
        w = rng.uniform(-bound, bound, (self.cout, self.cin, self.k))
        b = rng.uniform(-bound, bound, self.cout)
        return {self.param_names[0]: w.astype(dtype), self.param_names[1]: b.astype(dtype)}

    def _wmat(self, p):
        # (cout, k*cin) with tap-major columns to match the im2col layout.
        return p[self.param_names[0]].transpose(0, 2, 1).reshape(self.cout, self.k * self.cin)

    def forward(self, x, p, train, cache):
        c, b, t = x.shape
        if c != self.cin:
            raise ValueError(f"{self.name}: expected {self.cin} channels, got {c}")
        if self.k == 1:
            cols = x.reshape(c, b * t)
        else:
            xp = np.zeros((c, b, t + 2 * self.pad), dtype=x.dtype)
            xp[:, :, self.pad:self.pad + t] = x
            cols = np.empty((self.k, c, b, t), dtype=x.dtype)
            for j in range(self.k):
                cols[j] = xp[:, :, j * self.dil:j * self.dil + t]
            cols = cols.reshape(self.k * c, b * t)
        y = self._wmat(p) @ cols
        y += p[self.param_names[1]][:, None]
        if train:
            cache[self.name] = (cols, x.shape)
        return y.reshape(self.cout, b, t)

    def backward(self, dy, p, cache, grads):
        cols, (c, b, t) = cache[self.name]
        dy2 = dy.reshape(self.cout, b * t)
        dw = dy2 @ cols.T
        grads[self.param_names[0]] = dw.reshape(self.cout, self.k, self.cin).transpose(0, 2, 1).copy()
        grads[self.param_names[1]] = dy2.sum(axis=1)
        dcols = self._wmat(p).T @ dy2
        if self.k == 1:
            return dcols.reshape(c, b, t)
        dcols = dcols.reshape(self.k, c, b, t)
        dxp = np.zeros((c, b, t + 2 * self.pad), dtype=dy.dtype)
        for j in range(self.k):
            dxp[:, :, j * self.dil:j * self.dil + t] += dcols[j]
        return dxp[:, :, self.pad:self.pad + t]


class BatchNorm:
    def __init__(self, name, channels):
        self.name, self.channels = name, channels
        self.param_names = (f"{name}.gain", f"{name}.bias")
        self.buffer_names = (f"{name}.running_mean", f"{name}.running_var")

    def init(self, rng, dtype):
        c = self.channels
        return {self.param_names[0]: np.ones(c, dtype), self.param_names[1]: np.zeros(c, dtype)}

    def init_buffers(self, dtype):
        c = self.channels
        return {self.buffer_names[0]: np.zeros(c, dtype), self.buffer_names[1]: np.ones(c, dtype)}

    def forward(self, x, p, train, cache, buffers):
        c, b, t = x.shape
        gain, bias = p[self.param_names[0]], p[self.param_names[1]]
        x2 = x.reshape(c, b * t)
        if train:
            n = b * t
            mean = x2.mean(axis=1)
            xc = x2 - mean[:, None]
            var = np.einsum("ij,ij->i", xc, xc) / n
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = xc * inv[:, None]
            rm, rv = self.buffer_names
            buffers[rm] = ((1 - BN_MOMENTUM) * buffers[rm] + BN_MOMENTUM * mean).astype(x.dtype)
            unbiased = var * (n / (n - 1)) if n > 1 else var
            buffers[rv] = ((1 - BN_MOMENTUM) * buffers[rv] + BN_MOMENTUM * unbiased).astype(x.dtype)
            cache[self.name] = (xhat, inv)
        else:
            inv = 1.0 / np.sqrt(buffers[self.buffer_names[1]] + BN_EPS)
            xhat = (x2 - buffers[self.buffer_names[0]][:, None]) * inv[:, None]
        return (xhat * gain[:, None] + bias[:, None]).reshape(c, b, t)

    def backward(self, dy, p, cache, grads):
        xhat, inv = cache[self.name]
        c, b, t = dy.shape
        n = b * t
        dy2 = dy.reshape(c, n)
        gain = p[self.param_names[0]]
        sum_dy = dy2.sum(axis=1)
        sum_dy_xhat = np.einsum("ij,ij->i", dy2, xhat)
        grads[self.param_names[0]] = sum_dy_xhat
        grads[self.param_names[1]] = sum_dy
        scale = (gain * inv / n)[:, None]
        dx = scale * (n * dy2 - sum_dy[:, None] - xhat * sum_dy_xhat[:, None])
        return dx.reshape(c, b, t)


class ReLU:
    def __init__(self, name):
        self.name = name

    def forward(self, x, train, cache, frozen=None):
        mask = x > 0 if frozen is None else frozen[self.name]
        if train:
            cache[self.name] = mask
        return x * mask

    def backward(self, dy, cache):
        return dy * cache[self.name]


class Upsample:
    def __init__(self, name, factor):
        self.name, self.factor = name, factor

    def forward(self, x, train, cache):
        return np.repeat(x, self.factor, axis=2)

    def backward(self, dy, cache):
        c, b, t = dy.shape
        return dy.reshape(c, b, t // self.factor, self.factor).sum(axis=3)


class AvgPool:
    def __init__(self, name, window):
        self.name, self.window = name, window

    def forward(self, x, train, cache):
        c, b, t = x.shape
        return x.reshape(c, b, t // self.window, self.window).mean(axis=3)

    def backward(self, dy, cache):
        return np.repeat(dy / self.window, self.window, axis=2)


class Tanh:
    def __init__(self, name):
        self.name = name

    def forward(self, x, train, cache):
        y = np.tanh(x)
        if train:
            cache[self.name] = y
        return y

    def backward(self, dy, cache):
        y = cache[self.name]
        return dy * (1 - y * y)


@dataclass
class Model:
    """Layer stack plus parameters, gradients and BN running statistics."""

    config: ModelConfig
    layers: list
    params: OrderedDict
    buffers: OrderedDict
    grads: dict = field(default_factory=dict)
    _cache: dict | None = None
    # When set, ReLUs reuse these masks instead of recomputing them; used to
    # finite-difference the network on one fixed linear piece.
    frozen_relu_masks: dict | None = None

    @property
    def dtype(self):
        return self.config.dtype

    def forward(self, x, mode="eval"):
        """``(B, in_channels, t_in)`` -> ``(B, n_targets, t_out)``."""
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        cfg = self.config
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.t_in):
            raise ValueError(f"expected input (B, {cfg.in_channels}, {cfg.t_in}), got {x.shape}")
        train = mode == "train"
        if train and x.shape[0] < 2:
            raise ValueError("train-mode batch statistics need batch size >= 2")
        cache = {} if train else None
        h = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=self.dtype)
        for layer in self.layers:
            if isinstance(layer, Conv1d):
                h = layer.forward(h, self.params, train, cache)
            elif isinstance(layer, BatchNorm):
                h = layer.forward(h, self.params, train, cache, self.buffers)
            elif isinstance(layer, ReLU):
                h = layer.forward(h, train, cache, self.frozen_relu_masks)
            else:
                h = layer.forward(h, train, cache)
        self._cache = cache
        return np.ascontiguousarray(h.transpose(1, 0, 2))

    def backward(self, upstream_grad):
        """Backpropagate ``dL/d(output)``; fills and returns ``self.grads``.

        Requires the immediately preceding forward call to be in train mode.
        The activation cache is consumed.
        """
        if not self._cache:
            raise RuntimeError("no train-mode activation cache; run forward(x, 'train') first")
        cache, self._cache = self._cache, None
        g = np.ascontiguousarray(np.asarray(upstream_grad, dtype=self.dtype).transpose(1, 0, 2))
        grads = {}
        for layer in reversed(self.layers):
            if isinstance(layer, (Conv1d, BatchNorm)):
                g = layer.backward(g, self.params, cache, grads)
            else:
                g = layer.backward(g, cache)
        self.grads = {k: grads[k] for k in self.params}
        return self.grads

    def relu_masks(self):
        """ReLU masks from the last train-mode forward (before backward)."""
        if not self._cache:
            raise RuntimeError("no train-mode activation cache")
        return {l.name: self._cache[l.name].copy() for l in self.layers if isinstance(l, ReLU)}

    def predict(self, x, batch_size=64):
        outs = [self.forward(x[i:i + batch_size], "eval") for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def state_dict(self):
        out = OrderedDict(self.params)
        out.update(self.buffers)
        return out

    def load_state_dict(self, state):
        expected = list(self.params) + list(self.buffers)
        if sorted(state) != sorted(expected):
            missing = set(expected) - set(state)
            extra = set(state) - set(expected)
            raise ValueError(f"state mismatch; missing={sorted(missing)} extra={sorted(extra)}")
        for name in expected:
            ref = self.params.get(name, self.buffers.get(name))
            arr = np.asarray(state[name])
            if arr.shape != ref.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {ref.shape}")
            target = self.params if name in self.params else self.buffers
            target[name] = arr.astype(self.dtype).copy()


def build_model(cfg: ModelConfig) -> Model:
    """Assemble the layer stack and draw seeded initial parameters."""
    k = cfg.kernel_dilated
    pre, hid = cfg.pre_filters, cfg.dilated_filters
    spec = [("c1", cfg.in_channels, pre, 1, 1), ("c2", pre, pre, 1, 1)]
    cin = pre
    for i, d in enumerate(cfg.dilations, start=1):
        spec.append((f"d{i}", cin, hid, k, d))
        cin = hid
    spec += [("c3", hid, hid, 1, 1), ("c4", hid, hid, k, 1)]
    layers = []
    for name, ci, co, kk, d in spec:
        layers += [Conv1d(name, ci, co, kk, d), BatchNorm(f"bn_{name}", co), ReLU(f"relu_{name}")]
    layers += [Upsample("up", cfg.upsample_factor), Conv1d("c5", hid, cfg.n_targets, 1, 1),
               AvgPool("pool", cfg.pool_window), Tanh("tanh")]

    rng = np.random.default_rng(cfg.seed)
    params, buffers = OrderedDict(), OrderedDict()
    for layer in layers:
        if isinstance(layer, (Conv1d, BatchNorm)):
            params.update(layer.init(rng, cfg.dtype))
        if isinstance(layer, BatchNorm):
            buffers.update(layer.init_buffers(cfg.dtype))
    return Model(cfg, layers, params, buffers)


def param_count(model: Model) -> int:
    """Trainable scalars: conv weights/biases and BN gains/biases."""
    return int(sum(p.size for p in model.params.values()))


def mse_loss(pred, target, mask=None):
    """Masked mean squared error and its gradient w.r.t. ``pred``.

    ``mask`` is ``(B, T)`` frame validity; padded frames get zero gradient.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if mask is None:
        mask = np.ones((pred.shape[0], pred.shape[2]), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (pred.shape[0], pred.shape[2]):
        raise ValueError("mask must be (batch, time)")
    n = int(mask.sum()) * pred.shape[1]
    if n == 0:
        raise ValueError("empty mask")
    m = mask[:, None, :]
    diff = (pred - target) * m
    loss = float(np.sum(diff.astype(np.float64) ** 2) / n)
    grad = (2.0 / n) * diff
    return loss, grad.astype(pred.dtype)
