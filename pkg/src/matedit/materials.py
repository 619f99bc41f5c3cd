"""Parametric surface materials and the four slider-controlled attribute edits.

A material holds the channels of a metallic-roughness BRDF plus transmission.
Channels are either constants or procedural checker maps; edits apply per-texel
when a map is present and clamp every result back into [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

# Canonical attribute order used everywhere a strength vector is laid out
# channel-wise: albedo, roughness, metallic, transparency.
ATTRIBUTES = ("albedo", "roughness", "metallic", "transparency")

# Dataset-generation ranges per attribute; inference may over-drive beyond
# these (masked edits), bounded by OVERDRIVE_RANGE.
ATTRIBUTE_RANGES = {
    "albedo": (0.0, 1.0),
    "roughness": (-1.0, 1.0),
    "metallic": (-1.0, 1.0),
    "transparency": (0.0, 1.0),
}
OVERDRIVE_RANGE = (-2.0, 2.0)

RGB = tuple[float, float, float]

GRAY: RGB = (0.5, 0.5, 0.5)
WHITE: RGB = (1.0, 1.0, 1.0)

# Default white-overlay fraction applied to the albedo at full transparency.
DEFAULT_TRANSPARENCY_OVERLAY = 0.5


@dataclass(frozen=True)
class Checker:
    """Procedural 3D checkerboard map alternating between two channel values.

    ``a`` and ``b`` are either scalars or RGB triples; ``scale`` is the number
    of cells per world unit.
    """

    a: Union[float, RGB]
    b: Union[float, RGB]
    scale: float = 2.0

    def eval_at(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the map at an (N, 3) array of world positions."""
        cells = np.floor(points * self.scale).astype(np.int64)
        parity = (cells.sum(axis=1) % 2).astype(bool)
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim == 0:
            return np.where(parity, b, a)
        out = np.where(parity[:, None], b[None, :], a[None, :])
        return out


ChannelValue = Union[float, RGB, Checker]


@dataclass(frozen=True)
class Material:
    """Per-surface BRDF description.

    Scalar channels live in [0, 1]; ``ior`` is the index of refraction
    (>= 1).  Roughness and metallic default to 0.5, the control state used
    when no per-surface map overrides them.
    """

    base_color: Union[RGB, Checker] = (0.8, 0.8, 0.8)
    roughness: Union[float, Checker] = 0.5
    metallic: Union[float, Checker] = 0.5
    transmission: float = 0.0
    ior: float = 1.45

    def __post_init__(self):
        for name in ("base_color", "roughness", "metallic"):
            _validate_channel(name, getattr(self, name))
        if not (0.0 <= self.transmission <= 1.0):
            raise ValueError(f"transmission {self.transmission} outside [0, 1]")
        if not (self.ior >= 1.0 and math.isfinite(self.ior)):
            raise ValueError(f"ior {self.ior} must be finite and >= 1")


@dataclass(frozen=True)
class EditStrength:
    """Relative attribute-strength vector (s_r, s_m, s_a, s_t).

    The zero vector is the control state.  Declared dataset ranges are
    [-1, 1] for roughness/metallic and [0, 1] for albedo/transparency;
    over-driven values are accepted by the edit transform (clamping keeps
    outputs valid).
    """

    s_r: float = 0.0
    s_m: float = 0.0
    s_a: float = 0.0
    s_t: float = 0.0

    @classmethod
    def zero(cls) -> "EditStrength":
        return cls()

    @classmethod
    def from_mapping(cls, values: dict) -> "EditStrength":
        known = {"roughness": "s_r", "metallic": "s_m", "albedo": "s_a",
                 "transparency": "s_t"}
        kwargs = {}
        for attr, v in values.items():
            if attr not in known:
                raise KeyError(f"unknown attribute {attr!r}; expected one of {ATTRIBUTES}")
            kwargs[known[attr]] = float(v)
        return cls(**kwargs)

    def component(self, attribute: str) -> float:
        return {"albedo": self.s_a, "roughness": self.s_r,
                "metallic": self.s_m, "transparency": self.s_t}[attribute]

    def as_tuple(self) -> tuple[float, float, float, float]:
        # Canonical (a, r, m, t) order.
        return (self.s_a, self.s_r, self.s_m, self.s_t)

    def is_zero(self) -> bool:
        return self.s_r == 0.0 and self.s_m == 0.0 and self.s_a == 0.0 and self.s_t == 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.s_r, self.s_m, self.s_a, self.s_t))


def _validate_channel(name: str, value: ChannelValue) -> None:
    if isinstance(value, Checker):
        _validate_channel(name, value.a)
        _validate_channel(name, value.b)
        return
    arr = np.asarray(value, dtype=np.float64)
    if name == "base_color" and arr.shape != (3,):
        raise ValueError(f"base_color must be an RGB triple, got shape {arr.shape}")
    if name != "base_color" and arr.ndim != 0:
        raise ValueError(f"{name} must be scalar, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} value {value} outside [0, 1]")


def _clamp01(x):
    return np.clip(x, 0.0, 1.0)


def _map_scalar(value, fn):
    if isinstance(value, Checker):
        return replace(value, a=fn(value.a), b=fn(value.b))
    return fn(value)


def _edit_scalar(value, delta):
    def shift(v):
        return float(_clamp01(v + delta))
    return _map_scalar(value, shift)


def _edit_color(value, gray_mix, white_mix):
    def mix(rgb):
        c = np.asarray(rgb, dtype=np.float64)
        c = c + (np.asarray(GRAY) - c) * gray_mix
        c = c + (np.asarray(WHITE) - c) * white_mix
        return tuple(float(v) for v in _clamp01(c))
    return _map_scalar(value, mix)


def apply_attribute_edits(base: Material, s: EditStrength,
                          k_overlay: float = DEFAULT_TRANSPARENCY_OVERLAY) -> Material:
    """Return a new material with the strength vector applied to ``base``.

    Roughness and metallic shift additively by ``s_r``/``s_m`` and both drop
    by ``s_t``; albedo mixes toward constant gray by ``s_a`` and then toward
    white by ``s_t * k_overlay``; transmission rises by ``s_t``.  All scalar
    channels clamp to [0, 1].  ``base`` is not mutated.
    """
    if not s.is_finite():
        raise ValueError(f"non-finite strength components: {s}")
    gray_mix = float(_clamp01(s.s_a))
    white_mix = float(_clamp01(s.s_t)) * k_overlay
    return Material(
        base_color=_edit_color(base.base_color, gray_mix, white_mix),
        roughness=_edit_scalar(base.roughness, s.s_r - s.s_t),
        metallic=_edit_scalar(base.metallic, s.s_m - s.s_t),
        transmission=float(_clamp01(base.transmission + s.s_t)),
        ior=base.ior,
    )


def _channels_equal(a: ChannelValue, b: ChannelValue, tol: float) -> bool:
    if isinstance(a, Checker) or isinstance(b, Checker):
        if not (isinstance(a, Checker) and isinstance(b, Checker)):
            return False
        return (_channels_equal(a.a, b.a, tol) and _channels_equal(a.b, b.b, tol)
                and a.scale == b.scale)
    return bool(np.all(np.abs(np.asarray(a, dtype=np.float64)
                              - np.asarray(b, dtype=np.float64)) <= tol))


def is_null_edit(base: Material, s: EditStrength,
                 k_overlay: float = DEFAULT_TRANSPARENCY_OVERLAY,
                 tol: float = 1e-6) -> bool:
    """Predict, without rendering, whether the edit is a clamping no-op."""
    edited = apply_attribute_edits(base, s, k_overlay=k_overlay)
    return (_channels_equal(base.base_color, edited.base_color, tol)
            and _channels_equal(base.roughness, edited.roughness, tol)
            and _channels_equal(base.metallic, edited.metallic, tol)
            and abs(base.transmission - edited.transmission) <= tol)
