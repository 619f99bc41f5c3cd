"""Image buffers with an explicit linear/display encoding state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LINEAR = "linear"
DISPLAY = "display"

# Rec.709 luminance weights, used both for tonemapping and metrics.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class ImageBuffer:
    """Row-major RGB image.  ``encoding`` is either 'linear' (radiance,
    unbounded floats) or 'display' (sRGB-encoded values in [0, 1])."""

    pixels: np.ndarray  # (H, W, 3) float
    encoding: str = LINEAR

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 + 1 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {self.pixels.shape}")
        if self.encoding not in (LINEAR, DISPLAY):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("image contains non-finite pixels")
        if self.encoding == DISPLAY and (self.pixels.min() < -1e-9 or self.pixels.max() > 1 + 1e-9):
            raise ValueError("display-encoded image must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.pixels.copy(), self.encoding)

    def luminance(self) -> np.ndarray:
        return self.pixels @ LUMA_WEIGHTS


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """IEC 61966-2-1 transfer function, defined on [0, 1]."""
    linear = np.clip(linear, 0.0, 1.0)
    low = linear * 12.92
    high = 1.055 * np.power(linear, 1.0 / 2.4, where=linear > 0,
                            out=np.zeros_like(linear)) - 0.055
    return np.where(linear <= 0.0031308, low, high)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    encoded = np.clip(encoded, 0.0, 1.0)
    low = encoded / 12.92
    high = np.power((encoded + 0.055) / 1.055, 2.4)
    return np.where(encoded <= 0.04045, low, high)


def tonemap(linear: ImageBuffer) -> ImageBuffer:
    """Reinhard L/(1+L) on luminance followed by the sRGB transfer.

    Monotone in input luminance; output is display-encoded in [0, 1].
    """
    if linear.encoding != LINEAR:
        raise ValueError("tonemap expects a linear-encoded image")
    lum = linear.luminance()
    scale = np.ones_like(lum)
    nz = lum > 0
    scale[nz] = (lum[nz] / (1.0 + lum[nz])) / lum[nz]
    compressed = np.clip(linear.pixels * scale[..., None], 0.0, 1.0)
    return ImageBuffer(srgb_encode(compressed), DISPLAY)


def mean_squared_error(a: ImageBuffer, b: ImageBuffer) -> float:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    return float(np.mean((a.pixels - b.pixels) ** 2))
