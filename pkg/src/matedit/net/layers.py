"""Neural-net building blocks with explicit forward/backward passes.

Layers operate channels-last, (B, H, W, C), so convolutions reduce to
per-kernel-tap GEMMs on contiguous buffers.  Each layer stores what it needs
for the backward pass in an opaque cache and reads/writes its parameters in a
flat name -> ndarray dict.  Gradients are exact (verified against finite
differences in the test suite).
"""

from __future__ import annotations

import math

import numpy as np


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d:
    """k x k convolution, 'same' padding, stride 1 or 2.

    Implemented as one full-plane GEMM per kernel tap followed by shifted
    accumulation, which keeps every matmul contiguous.
    """

    def __init__(self, name, cin, cout, ksize=3, stride=1, zero_init=False):
        self.name = name
        self.cin, self.cout, self.k, self.stride = cin, cout, ksize, stride
        self.zero_init = zero_init

    def param_shapes(self):
        return {f"{self.name}.w": (self.k, self.k, self.cin, self.cout),
                f"{self.name}.b": (self.cout,)}

    def init_params(self, rng, dtype):
        shape = (self.k, self.k, self.cin, self.cout)
        if self.zero_init:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = he_normal(rng, shape, self.cin * self.k * self.k, dtype)
        return {f"{self.name}.w": w,
                f"{self.name}.b": np.zeros(self.cout, dtype=dtype)}

    def _pad(self, x):
        bsz, h, wd, cin = x.shape
        pad = self.k // 2
        if pad == 0:
            return np.ascontiguousarray(x)
        xp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + wd] = x
        return xp

    def forward(self, params, x):
        w = params[f"{self.name}.w"]
        bsz, h, wd, cin = x.shape
        k, s = self.k, self.stride
        xp = self._pad(x)
        hp, wp = xp.shape[1], xp.shape[2]
        ho = (hp - k) // s + 1
        wo = (wp - k) // s + 1
        # One GEMM over the whole padded plane for all k*k taps at once.
        w_all = w.reshape(k * k, cin, self.cout)
        wmat = np.ascontiguousarray(w_all.transpose(1, 0, 2)).reshape(cin, -1)
        taps = (xp.reshape(-1, cin) @ wmat).reshape(bsz, hp, wp, k * k, self.cout)
        y = np.empty((bsz, ho, wo, self.cout), dtype=x.dtype)
        y[:] = params[f"{self.name}.b"]
        idx = 0
        for ki in range(k):
            for kj in range(k):
                y += taps[:, ki:ki + s * (ho - 1) + 1:s,
                          kj:kj + s * (wo - 1) + 1:s, idx]
                idx += 1
        return y, (xp, x.shape)

    def backward(self, params, cache, dy):
        w = params[f"{self.name}.w"]
        xp, x_shape = cache
        bsz, h, wd, cin = x_shape
        k, s = self.k, self.stride
        pad = k // 2
        ho, wo = dy.shape[1], dy.shape[2]
        dy = np.ascontiguousarray(dy)
        dy_flat = dy.reshape(-1, self.cout)
        # dxp taps for all kernel positions in one GEMM, then shifted scatter.
        w_all = w.reshape(k * k, cin, self.cout)
        wb = np.ascontiguousarray(w_all.transpose(2, 0, 1)).reshape(self.cout, -1)
        dtaps = (dy_flat @ wb).reshape(bsz, ho, wo, k * k, cin)
        dxp = np.zeros_like(xp)
        dw = np.empty_like(w)
        idx = 0
        for ki in range(k):
            for kj in range(k):
                tap = xp[:, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s]
                dw[ki, kj] = np.ascontiguousarray(tap).reshape(-1, cin).T @ dy_flat
                dxp[:, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += \
                    dtaps[:, :, :, idx]
                idx += 1
        db = dy_flat.sum(axis=0)
        dx = dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp
        return np.ascontiguousarray(dx), {f"{self.name}.w": dw, f"{self.name}.b": db}


class GroupNorm:
    def __init__(self, name, channels, groups=8, eps=1e-5):
        if channels % groups:
            raise ValueError(f"channels {channels} not divisible by groups {groups}")
        self.name, self.channels, self.groups, self.eps = name, channels, groups, eps

    def param_shapes(self):
        return {f"{self.name}.gamma": (self.channels,),
                f"{self.name}.beta": (self.channels,)}

    def init_params(self, rng, dtype):
        return {f"{self.name}.gamma": np.ones(self.channels, dtype=dtype),
                f"{self.name}.beta": np.zeros(self.channels, dtype=dtype)}

    @staticmethod
    def _group_mean(x, groups):
        """Mean over (H, W, channels-within-group): (B, H, W, C) -> (B, g)."""
        bsz, h, w, c = x.shape
        per_channel = x.reshape(bsz, h * w, c).sum(axis=1)    # contiguous reduce
        return per_channel.reshape(bsz, groups, c // groups).sum(axis=2) \
            / (h * w * (c // groups))

    def forward(self, params, x):
        bsz, h, w, c = x.shape
        g = self.groups
        mean = self._group_mean(x, g)
        mean_sq = self._group_mean(x * x, g)
        var = mean_sq - mean * mean
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        mean = mean.astype(x.dtype)
        mean_b = mean.repeat(c // g, axis=1)[:, None, None, :]
        inv_b = inv.repeat(c // g, axis=1)[:, None, None, :]
        xhat = (x - mean_b) * inv_b
        gamma = params[f"{self.name}.gamma"]
        y = xhat * gamma + params[f"{self.name}.beta"]
        return y, (xhat, inv, gamma)

    def backward(self, params, cache, dy):
        xhat, inv, gamma = cache
        bsz, h, w, c = dy.shape
        g = self.groups
        dgamma = (dy * xhat).reshape(-1, c).sum(axis=0)
        dbeta = dy.reshape(-1, c).sum(axis=0)
        dxhat = dy * gamma
        m1 = self._group_mean(dxhat, g).repeat(c // g, axis=1)[:, None, None, :]
        m2 = self._group_mean(dxhat * xhat, g).repeat(c // g, axis=1)[:, None, None, :]
        inv_b = inv.repeat(c // g, axis=1)[:, None, None, :]
        dx = inv_b * (dxhat - m1 - xhat * m2)
        return dx, {f"{self.name}.gamma": dgamma, f"{self.name}.beta": dbeta}


class SiLU:
    def param_shapes(self):
        return {}

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x):
        sig = 1.0 / (1.0 + np.exp(-x))
        return x * sig, (x, sig)

    def backward(self, params, cache, dy):
        x, sig = cache
        return dy * sig * (1.0 + x * (1.0 - sig)), {}


class Linear:
    def __init__(self, name, din, dout, zero_init=False):
        self.name, self.din, self.dout, self.zero_init = name, din, dout, zero_init

    def param_shapes(self):
        return {f"{self.name}.w": (self.dout, self.din),
                f"{self.name}.b": (self.dout,)}

    def init_params(self, rng, dtype):
        if self.zero_init:
            w = np.zeros((self.dout, self.din), dtype=dtype)
        else:
            w = he_normal(rng, (self.dout, self.din), self.din, dtype)
        return {f"{self.name}.w": w, f"{self.name}.b": np.zeros(self.dout, dtype=dtype)}

    def forward(self, params, x):
        w = params[f"{self.name}.w"]
        return x @ w.T + params[f"{self.name}.b"], x

    def backward(self, params, cache, dy):
        x = cache
        w = params[f"{self.name}.w"]
        return dy @ w, {f"{self.name}.w": dy.T @ x, f"{self.name}.b": dy.sum(axis=0)}


class Embedding:
    def __init__(self, name, n_tokens, dim, init_scale=0.02):
        self.name, self.n_tokens, self.dim = name, n_tokens, dim
        self.init_scale = init_scale

    def param_shapes(self):
        return {f"{self.name}.table": (self.n_tokens, self.dim)}

    def init_params(self, rng, dtype):
        table = (rng.standard_normal((self.n_tokens, self.dim)) * self.init_scale)
        return {f"{self.name}.table": table.astype(dtype)}

    def forward(self, params, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.min() < 0 or tokens.max() >= self.n_tokens:
            raise KeyError(f"token id outside table of size {self.n_tokens}")
        return params[f"{self.name}.table"][tokens], tokens

    def backward(self, params, cache, dy):
        tokens = cache
        grad = np.zeros_like(params[f"{self.name}.table"])
        np.add.at(grad, tokens, dy)
        return None, {f"{self.name}.table": grad}


class FiLM:
    """Per-channel affine modulation from a conditioning vector.

    Projections are zero-initialized, so the block starts as an identity.
    """

    def __init__(self, name, channels, cond_dim):
        self.name = name
        self.proj = Linear(f"{name}.proj", cond_dim, 2 * channels, zero_init=True)
        self.channels = channels

    def param_shapes(self):
        return self.proj.param_shapes()

    def init_params(self, rng, dtype):
        return self.proj.init_params(rng, dtype)

    def forward(self, params, x, cond):
        sc, proj_cache = self.proj.forward(params, cond)
        scale = sc[:, None, None, :self.channels]
        shift = sc[:, None, None, self.channels:]
        y = x * (1.0 + scale) + shift
        return y, (x, scale, proj_cache)

    def backward(self, params, cache, dy):
        x, scale, proj_cache = cache
        dx = dy * (1.0 + scale)
        dscale = (dy * x).sum(axis=(1, 2))
        dshift = dy.sum(axis=(1, 2))
        dsc = np.concatenate([dscale, dshift], axis=1)
        dcond, grads = self.proj.backward(params, proj_cache, dsc)
        return dx, dcond, grads


class UpsampleNearest2x:
    def param_shapes(self):
        return {}

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x):
        return x.repeat(2, axis=1).repeat(2, axis=2), x.shape

    def backward(self, params, cache, dy):
        bsz, h, w, c = cache
        dx = dy.reshape(bsz, h, 2, w, 2, c).sum(axis=(2, 4))
        return dx, {}


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of the (integer) diffusion time, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb
