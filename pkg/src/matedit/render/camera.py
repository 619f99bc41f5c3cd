"""Pinhole camera with look-at orientation (+z world up)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import normalize


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    vertical_fov: float          # degrees, in (10, 120)
    resolution: tuple[int, int]  # (width, height)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position and look_at coincide")
        if not (10.0 < self.vertical_fov < 120.0):
            raise ValueError(f"vertical_fov {self.vertical_fov} outside (10, 120)")
        w, h = self.resolution
        if w < 8 or h < 8:
            raise ValueError(f"resolution {self.resolution} below 8x8")

    def basis(self):
        forward = normalize(self.look_at - self.position)
        up = np.array([0.0, 0.0, 1.0])
        if abs(forward @ up) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
        right = normalize(np.cross(forward, up))
        true_up = np.cross(right, forward)
        return forward, right, true_up

    def rays(self, px: np.ndarray, py: np.ndarray):
        """Rays through continuous pixel coordinates (0..W, 0..H; y down).

        Returns (origins, dirs) with dirs normalized.
        """
        w, h = self.resolution
        forward, right, true_up = self.basis()
        tan_half = math.tan(math.radians(self.vertical_fov) / 2)
        aspect = w / h
        ndc_x = (2.0 * px / w - 1.0) * tan_half * aspect
        ndc_y = (1.0 - 2.0 * py / h) * tan_half
        dirs = (forward[None, :]
                + ndc_x[:, None] * right[None, :]
                + ndc_y[:, None] * true_up[None, :])
        dirs = normalize(dirs)
        origins = np.broadcast_to(self.position, dirs.shape).copy()
        return origins, dirs
