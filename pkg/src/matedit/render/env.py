"""Environment lighting: a procedural sun/sky model and lat-long radiance maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import normalize
from .image import LINEAR, ImageBuffer
from .imageio import read_hdr


@dataclass
class ProceduralSky:
    """Analytic sky: horizon-to-zenith gradient plus a sun lobe, darker ground."""

    horizon_color: np.ndarray = (0.6, 0.65, 0.7)
    zenith_color: np.ndarray = (0.2, 0.35, 0.6)
    sun_direction: np.ndarray = (0.3, 0.2, 0.8)
    sun_intensity: float = 20.0
    sun_sharpness: float = 400.0
    ground_color: np.ndarray = (0.25, 0.22, 0.2)

    def __post_init__(self):
        self.horizon_color = np.asarray(self.horizon_color, dtype=np.float64)
        self.zenith_color = np.asarray(self.zenith_color, dtype=np.float64)
        self.ground_color = np.asarray(self.ground_color, dtype=np.float64)
        self.sun_direction = normalize(np.asarray(self.sun_direction, dtype=np.float64))
        if self.sun_intensity < 0:
            raise ValueError("sun_intensity must be non-negative")

    def radiance(self, dirs: np.ndarray) -> np.ndarray:
        dirs = np.atleast_2d(dirs)
        z = np.clip(dirs[:, 2], -1.0, 1.0)
        up = np.clip(z, 0.0, 1.0)[:, None]
        sky = self.horizon_color[None, :] * (1 - up) + self.zenith_color[None, :] * up
        below = np.clip(-z, 0.0, 1.0)[:, None]
        sky = sky * (1 - below) + self.ground_color[None, :] * below
        cos_sun = np.clip(dirs @ self.sun_direction, 0.0, 1.0)
        sun = self.sun_intensity * np.power(cos_sun, self.sun_sharpness)
        return sky + sun[:, None]

    def to_latlong(self, rows: int = 64, cols: int = 128) -> "EnvironmentMap":
        theta = (np.arange(rows) + 0.5) / rows * np.pi
        phi = (np.arange(cols) + 0.5) / cols * 2 * np.pi - np.pi
        th, ph = np.meshgrid(theta, phi, indexing="ij")
        dirs = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                         np.cos(th)], axis=-1).reshape(-1, 3)
        img = self.radiance(dirs).reshape(rows, cols, 3)
        return EnvironmentMap(ImageBuffer(img, LINEAR))


@dataclass
class EnvironmentMap:
    """Lat-long linear radiance map; row 0 is the zenith (+z)."""

    image: ImageBuffer
    _pixels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.image.encoding != LINEAR:
            raise ValueError("environment maps must be linear radiance")
        if self.image.pixels.min() < 0:
            raise ValueError("environment radiance must be non-negative")
        self._pixels = self.image.pixels

    @classmethod
    def from_hdr(cls, path) -> "EnvironmentMap":
        return cls(read_hdr(path))

    def radiance(self, dirs: np.ndarray) -> np.ndarray:
        dirs = np.atleast_2d(dirs)
        h, w = self._pixels.shape[:2]
        z = np.clip(dirs[:, 2], -1.0, 1.0)
        theta = np.arccos(z)                       # 0 .. pi
        phi = np.arctan2(dirs[:, 1], dirs[:, 0])   # -pi .. pi
        r = theta / np.pi * h - 0.5
        c = (phi + np.pi) / (2 * np.pi) * w - 0.5
        r0 = np.floor(r).astype(int)
        c0 = np.floor(c).astype(int)
        fr = (r - r0)[:, None]
        fc = (c - c0)[:, None]
        r0c = np.clip(r0, 0, h - 1)
        r1c = np.clip(r0 + 1, 0, h - 1)
        c0w = c0 % w
        c1w = (c0 + 1) % w
        p = self._pixels
        top = p[r0c, c0w] * (1 - fc) + p[r0c, c1w] * fc
        bot = p[r1c, c0w] * (1 - fc) + p[r1c, c1w] * fc
        return top * (1 - fr) + bot * fr
