"""Unbiased path tracer over environment-lit scenes.

Rays are traced in batches; per-tile RNG streams make renders bit-identical
for any tile execution order or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..materials import Material
from .brdf import ShadingParams, sample_brdf_arrays, shading_params
from .camera import Camera
from .env import EnvironmentMap, ProceduralSky
from .geometry import normalize
from .image import LINEAR, ImageBuffer

MAX_DEPTH_DEFAULT = 8
RR_START_DEPTH = 3
RR_MIN_SURVIVAL = 0.05


@dataclass
class SceneObject:
    geometry: object
    material: Material
    object_class: str

    def __post_init__(self):
        if not self.object_class:
            raise ValueError("object_class must be non-empty")


@dataclass
class Scene:
    objects: list
    env: Union[ProceduralSky, EnvironmentMap]
    camera: Camera = None

    def __post_init__(self):
        if not self.objects:
            raise ValueError("scene needs at least one object")
        if self.env is None:
            raise ValueError("scene needs an environment light")

    def intersect(self, origins, dirs):
        """Nearest hit over all objects: (t, object_index, normals)."""
        n = len(origins)
        best_t = np.full(n, np.inf)
        best_obj = np.full(n, -1, dtype=np.int64)
        best_n = np.zeros((n, 3))
        for k, obj in enumerate(self.objects):
            t, nrm = obj.geometry.intersect(origins, dirs)
            closer = t < best_t
            best_t[closer] = t[closer]
            best_obj[closer] = k
            best_n[closer] = nrm[closer]
        return best_t, best_obj, best_n


def trace_paths(scene: Scene, origins, dirs, rng: np.random.Generator,
                max_depth: int = MAX_DEPTH_DEFAULT) -> np.ndarray:
    """Radiance estimates for a batch of rays, shape (N, 3)."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    origins = np.array(origins, dtype=np.float64, copy=True)
    dirs = normalize(np.asarray(dirs, dtype=np.float64).copy())
    n = len(origins)
    radiance = np.zeros((n, 3))
    throughput = np.ones((n, 3))
    alive = np.arange(n)

    for depth in range(max_depth):
        if len(alive) == 0:
            break
        o, d = origins[alive], dirs[alive]
        t, obj_idx, normals = scene.intersect(o, d)
        missed = ~np.isfinite(t)
        if missed.any():
            rows = alive[missed]
            radiance[rows] += throughput[rows] * scene.env.radiance(d[missed])
        hit = ~missed
        if not hit.any():
            break
        rows = alive[hit]
        o, d = o[hit], d[hit]
        points = o + t[hit][:, None] * d
        normals = normals[hit]
        obj_idx = obj_idx[hit]
        wo = -d

        new_dirs = np.zeros_like(points)
        tp_scale = np.zeros_like(points)
        for k in np.unique(obj_idx):
            sel = obj_idx == k
            params = shading_params(scene.objects[k].material, points[sel])
            nrm = normals[sel].copy()
            inside = np.einsum("ij,ij->i", nrm, wo[sel]) < 0.0
            nrm[inside] *= -1.0
            params.ior = np.where(inside, 1.0 / params.ior, params.ior)
            wi, _, tp = sample_brdf_arrays(params, nrm, wo[sel], rng)
            new_dirs[sel] = wi
            tp_scale[sel] = tp

        throughput[rows] *= tp_scale
        origins[rows] = points + new_dirs * 1e-9
        dirs[rows] = new_dirs
        keep = tp_scale.max(axis=1) > 0.0

        if depth >= RR_START_DEPTH:
            survive = np.clip(throughput[rows].max(axis=1), RR_MIN_SURVIVAL, 1.0)
            lucky = rng.random(len(rows)) < survive
            throughput[rows[lucky]] /= survive[lucky][:, None]
            keep &= lucky
        alive = rows[keep]
    return radiance


def trace_path(scene: Scene, origin, direction, rng: np.random.Generator,
               max_depth: int = MAX_DEPTH_DEFAULT) -> np.ndarray:
    """Single-ray convenience wrapper."""
    out = trace_paths(scene, np.asarray(origin, dtype=np.float64).reshape(1, 3),
                      np.asarray(direction, dtype=np.float64).reshape(1, 3),
                      rng, max_depth)
    return out[0]


def _render_tile(scene, rows, spp, seed, tile_index, max_depth):
    w, h = scene.camera.resolution
    r0, r1 = rows
    rng = np.random.default_rng([seed, tile_index])
    ys, xs = np.mgrid[r0:r1, 0:w]
    xs = np.tile(xs.ravel(), spp).astype(np.float64)
    ys = np.tile(ys.ravel(), spp).astype(np.float64)
    xs += rng.random(xs.shape)
    ys += rng.random(ys.shape)
    origins, dirs = scene.camera.rays(xs, ys)
    radiance = trace_paths(scene, origins, dirs, rng, max_depth)
    radiance = radiance.reshape(spp, r1 - r0, w, 3).mean(axis=0)
    return radiance


def render_image(scene: Scene, spp: int, seed: int = 0,
                 max_depth: int = MAX_DEPTH_DEFAULT, threads: int = 1,
                 tile_rows: int = 8) -> ImageBuffer:
    """Deterministic linear render at the scene camera's resolution."""
    if spp < 1:
        raise ValueError("spp must be >= 1")
    if scene.camera is None:
        raise ValueError("scene has no camera")
    w, h = scene.camera.resolution
    out = np.zeros((h, w, 3))
    tiles = [(r, min(r + tile_rows, h)) for r in range(0, h, tile_rows)]

    def work(item):
        idx, rows = item
        out[rows[0]:rows[1]] = _render_tile(scene, rows, spp, seed, idx, max_depth)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, enumerate(tiles)))
    else:
        for item in enumerate(tiles):
            work(item)
    return ImageBuffer(out, LINEAR)


def primary_object_mask(scene: Scene, object_index: int = 0) -> np.ndarray:
    """Boolean (H, W) mask of pixels whose center ray first hits the object."""
    w, h = scene.camera.resolution
    ys, xs = np.mgrid[0:h, 0:w]
    origins, dirs = scene.camera.rays(xs.ravel() + 0.5, ys.ravel() + 0.5)
    _, obj_idx, _ = scene.intersect(origins, dirs)
    return (obj_idx == object_index).reshape(h, w)
