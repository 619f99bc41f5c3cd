"""Conditional UNet denoiser: two downsampling stages, FiLM-modulated residual
blocks, sinusoidal time features and a learned prompt-token table."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (Conv2d, Embedding, FiLM, GroupNorm, Linear, SiLU,
                     UpsampleNearest2x, timestep_embedding)

NULL_TOKEN = 0


@dataclass(frozen=True)
class ArchDescriptor:
    in_channels: int
    n_tokens: int            # including the null token at index 0
    out_channels: int = 3
    base_width: int = 32
    time_dim: int = 64
    prompt_dim: int = 32
    groups: int = 8

    @property
    def cond_dim(self) -> int:
        return self.time_dim + self.prompt_dim

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "n_tokens": self.n_tokens,
                "out_channels": self.out_channels, "base_width": self.base_width,
                "time_dim": self.time_dim, "prompt_dim": self.prompt_dim,
                "groups": self.groups}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        return cls(**d)


class ResBlock:
    """GN -> SiLU -> conv -> FiLM -> GN -> SiLU -> conv, plus (projected) skip."""

    def __init__(self, name, cin, cout, cond_dim, groups):
        self.gn1 = GroupNorm(f"{name}.gn1", cin, groups)
        self.act1 = SiLU()
        self.conv1 = Conv2d(f"{name}.conv1", cin, cout)
        self.film = FiLM(f"{name}.film", cout, cond_dim)
        self.gn2 = GroupNorm(f"{name}.gn2", cout, groups)
        self.act2 = SiLU()
        self.conv2 = Conv2d(f"{name}.conv2", cout, cout)
        self.skip = Conv2d(f"{name}.skip", cin, cout, ksize=1) if cin != cout else None

    def sublayers(self):
        layers = [self.gn1, self.conv1, self.film, self.gn2, self.conv2]
        if self.skip is not None:
            layers.append(self.skip)
        return layers

    def forward(self, params, x, cond):
        h, c_gn1 = self.gn1.forward(params, x)
        h, c_a1 = self.act1.forward(params, h)
        h, c_cv1 = self.conv1.forward(params, h)
        h, c_film = self.film.forward(params, h, cond)
        h, c_gn2 = self.gn2.forward(params, h)
        h, c_a2 = self.act2.forward(params, h)
        h, c_cv2 = self.conv2.forward(params, h)
        if self.skip is not None:
            s, c_skip = self.skip.forward(params, x)
        else:
            s, c_skip = x, None
        return h + s, (c_gn1, c_a1, c_cv1, c_film, c_gn2, c_a2, c_cv2, c_skip)

    def backward(self, params, cache, dy, grads):
        c_gn1, c_a1, c_cv1, c_film, c_gn2, c_a2, c_cv2, c_skip = cache
        dh, g = self.conv2.backward(params, c_cv2, dy); grads.update(g)
        dh, _ = self.act2.backward(params, c_a2, dh)
        dh, g = self.gn2.backward(params, c_gn2, dh); _accum(grads, g)
        dh, dcond, g = self.film.backward(params, c_film, dh); _accum(grads, g)
        dh, g = self.conv1.backward(params, c_cv1, dh); _accum(grads, g)
        dh, _ = self.act1.backward(params, c_a1, dh)
        dx, g = self.gn1.backward(params, c_gn1, dh); _accum(grads, g)
        if self.skip is not None:
            ds, g = self.skip.backward(params, c_skip, dy); _accum(grads, g)
            dx = dx + ds
        else:
            dx = dx + dy
        return dx, dcond


def _accum(grads: dict, new: dict) -> None:
    for k, v in new.items():
        if k in grads:
            grads[k] = grads[k] + v
        else:
            grads[k] = v


class UNet:
    def __init__(self, arch: ArchDescriptor):
        self.arch = arch
        b, cond = arch.base_width, arch.cond_dim
        g = arch.groups
        self.time_proj = Linear("time.proj", arch.time_dim, arch.time_dim)
        self.time_act = SiLU()
        self.prompt = Embedding("prompt", arch.n_tokens, arch.prompt_dim)
        self.stem = Conv2d("stem", arch.in_channels, b)
        self.enc1 = ResBlock("enc1", b, b, cond, g)
        self.down1 = Conv2d("down1", b, 2 * b, stride=2)
        self.enc2 = ResBlock("enc2", 2 * b, 2 * b, cond, g)
        self.down2 = Conv2d("down2", 2 * b, 4 * b, stride=2)
        self.mid = ResBlock("mid", 4 * b, 4 * b, cond, g)
        self.up1 = UpsampleNearest2x()
        self.upconv1 = Conv2d("upconv1", 4 * b, 2 * b)
        self.dec2 = ResBlock("dec2", 4 * b, 2 * b, cond, g)
        self.up2 = UpsampleNearest2x()
        self.upconv2 = Conv2d("upconv2", 2 * b, b)
        self.dec1 = ResBlock("dec1", 2 * b, b, cond, g)
        self.head_gn = GroupNorm("head.gn", b, g)
        self.head_act = SiLU()
        self.head = Conv2d("head", b, arch.out_channels, zero_init=True)

    def _layers(self):
        simple = [self.time_proj, self.prompt, self.stem, self.down1, self.down2,
                  self.upconv1, self.upconv2, self.head_gn, self.head]
        blocks = [self.enc1, self.enc2, self.mid, self.dec2, self.dec1]
        layers = list(simple)
        for blk in blocks:
            layers.extend(blk.sublayers())
        return layers

    def param_shapes(self) -> dict:
        shapes = {}
        for layer in self._layers():
            shapes.update(layer.param_shapes())
        return shapes

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> dict:
        params = {}
        for layer in self._layers():
            params.update(layer.init_params(rng, dtype))
        return params

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def forward(self, params, x, t, tokens):
        """x: (B, H, W, C) channels-last; t, tokens: (B,) ints.

        Returns (eps (B, H, W, out_channels), trace)."""
        dtype = params["stem.w"].dtype
        x = np.ascontiguousarray(np.asarray(x, dtype=dtype))
        t_feat = timestep_embedding(t, self.arch.time_dim).astype(dtype)
        te, c_tp = self.time_proj.forward(params, t_feat)
        te, c_ta = self.time_act.forward(params, te)
        pe, c_pe = self.prompt.forward(params, tokens)
        cond = np.concatenate([te, pe], axis=1)

        h0, c_stem = self.stem.forward(params, x)
        e1, c_e1 = self.enc1.forward(params, h0, cond)
        d1, c_d1 = self.down1.forward(params, e1)
        e2, c_e2 = self.enc2.forward(params, d1, cond)
        d2, c_d2 = self.down2.forward(params, e2)
        m, c_m = self.mid.forward(params, d2, cond)
        u1, c_u1 = self.up1.forward(params, m)
        u1, c_uc1 = self.upconv1.forward(params, u1)
        cat1 = np.concatenate([u1, e2], axis=-1)
        r2, c_r2 = self.dec2.forward(params, cat1, cond)
        u2, c_u2 = self.up2.forward(params, r2)
        u2, c_uc2 = self.upconv2.forward(params, u2)
        cat2 = np.concatenate([u2, e1], axis=-1)
        r1, c_r1 = self.dec1.forward(params, cat2, cond)
        hN, c_hgn = self.head_gn.forward(params, r1)
        hN, c_hact = self.head_act.forward(params, hN)
        out, c_head = self.head.forward(params, hN)
        trace = (c_tp, c_ta, c_pe, c_stem, c_e1, c_d1, c_e2, c_d2, c_m,
                 c_u1, c_uc1, c_r2, c_u2, c_uc2, c_r1, c_hgn, c_hact, c_head,
                 u1.shape[-1], u2.shape[-1])
        return out, trace

    def backward(self, params, trace, dout):
        """Exact gradients of a scalar loss with upstream derivative dout."""
        (c_tp, c_ta, c_pe, c_stem, c_e1, c_d1, c_e2, c_d2, c_m,
         c_u1, c_uc1, c_r2, c_u2, c_uc2, c_r1, c_hgn, c_hact, c_head,
         w1, w2) = trace
        dtype = params["stem.w"].dtype
        dout = np.asarray(dout, dtype=dtype)
        grads: dict = {}
        dh, g = self.head.backward(params, c_head, dout); _accum(grads, g)
        dh, _ = self.head_act.backward(params, c_hact, dh)
        dh, g = self.head_gn.backward(params, c_hgn, dh); _accum(grads, g)
        dcat2, dcond = self.dec1.backward(params, c_r1, dh, grads)
        du2, de1_a = dcat2[..., :w2], dcat2[..., w2:]
        du2, g = self.upconv2.backward(params, c_uc2, du2); _accum(grads, g)
        dr2, _ = self.up2.backward(params, c_u2, du2)
        dcat1, dc = self.dec2.backward(params, c_r2, dr2, grads)
        dcond = dcond + dc
        du1, de2_a = dcat1[..., :w1], dcat1[..., w1:]
        du1, g = self.upconv1.backward(params, c_uc1, du1); _accum(grads, g)
        dm, _ = self.up1.backward(params, c_u1, du1)
        dd2, dc = self.mid.backward(params, c_m, dm, grads)
        dcond = dcond + dc
        de2, g = self.down2.backward(params, c_d2, dd2); _accum(grads, g)
        de2 = de2 + de2_a
        dd1, dc = self.enc2.backward(params, c_e2, de2, grads)
        dcond = dcond + dc
        de1, g = self.down1.backward(params, c_d1, dd1); _accum(grads, g)
        de1 = de1 + de1_a
        dh0, dc = self.enc1.backward(params, c_e1, de1, grads)
        dcond = dcond + dc
        _, g = self.stem.backward(params, c_stem, dh0); _accum(grads, g)

        dte = dcond[:, :self.arch.time_dim]
        dpe = dcond[:, self.arch.time_dim:]
        _, g = self.prompt.backward(params, c_pe, dpe); _accum(grads, g)
        dte, _ = self.time_act.backward(params, c_ta, dte)
        _, g = self.time_proj.backward(params, c_tp, dte); _accum(grads, g)
        # Ensure every parameter has a gradient entry (unused token rows etc.
        # are exactly zero via the embedding scatter).
        for name, p in params.items():
            if name not in grads:
                grads[name] = np.zeros_like(p)
        return grads


@dataclass
class Denoiser:
    """UNet + parameters + prompt vocabulary; the object the diffusion module
    drives.  ``vocab`` maps "attr+attr|object_class" keys to token ids >= 1
    (0 is the null token)."""

    arch: ArchDescriptor
    params: dict
    vocab: dict
    active_attributes: tuple = ()
    schedule_config: dict = field(default_factory=dict)
    codec_mode: str = "identity"
    train_resolution: int = 32

    null_token: int = NULL_TOKEN

    def __post_init__(self):
        self.unet = UNet(self.arch)
        expect = self.unet.param_shapes()
        for name, shape in expect.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if tuple(self.params[name].shape) != tuple(shape):
                raise ValueError(f"parameter {name} shape {self.params[name].shape}"
                                 f" != expected {shape}")

    @classmethod
    def vocab_key(cls, attribute_names, object_class) -> str:
        phrase = "+".join(attribute_names)
        return f"{phrase}|{object_class}"

    def token_id(self, attribute_names, object_class) -> int:
        key = self.vocab_key(attribute_names, object_class)
        if key not in self.vocab:
            raise KeyError(f"unknown prompt token {key!r}; known: {sorted(self.vocab)}")
        return self.vocab[key]

    def forward(self, channels, t, token):
        """Single example (C, H, W) or batch (B, C, H, W), channels-first."""
        x = np.asarray(channels)
        single = x.ndim == 3
        if single:
            x = x[None]
            t = [t]
            token = [token]
        if x.shape[1] != self.arch.in_channels:
            raise ValueError(f"conditioning has {x.shape[1]} channels, model "
                             f"expects {self.arch.in_channels}")
        out, trace = self.unet.forward(self.params, x.transpose(0, 2, 3, 1),
                                       t, np.asarray(token))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite denoiser output")
        out = out.transpose(0, 3, 1, 2).astype(np.float64)
        if single:
            return out[0], trace
        return out, trace

    def backward(self, trace, dpred):
        """dpred matches forward's channels-first output shape."""
        d = np.asarray(dpred)
        if d.ndim == 3:
            d = d[None]
        return self.unet.backward(self.params, trace, d.transpose(0, 2, 3, 1))

    def param_count(self) -> int:
        return self.unet.param_count()
