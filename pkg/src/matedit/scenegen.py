"""Randomized scene/strength sampling and paired-image dataset generation.

Every (scene, camera) setup renders one control image at zero strength plus
one render per sampled strength vector; near-identical pairs are debiased by
rejection sampling at generation time.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .materials import (ATTRIBUTE_RANGES, ATTRIBUTES, Checker, EditStrength,
                        Material, apply_attribute_edits)
from .render import (Box, Camera, GroundPlane, ImageBuffer, ProceduralSky,
                     Scene, SceneObject, Sphere, make_icosphere,
                     mean_squared_error, render_image, tonemap)

# Verbatim operating point for null-example rejection.
W_NULL_DEFAULT = 0.80
TAU_DEFAULT = 0.05

OBJECT_CLASSES = ("sphere", "box", "blob")

VOLUME_ATTRIBUTES = {"albedo", "roughness", "metallic"}


@dataclass
class DatasetConfig:
    n_objects: int = 4
    materials_per_object: int = 2
    n_env: int = 8
    cams_per_setup: int = 4
    strengths_per_attribute: int = 5
    attributes: tuple = ("albedo", "roughness", "metallic")
    sampling_mode: str = "axis"   # "axis" | "volume"
    resolution: int = 32
    spp: int = 32
    seed: int = 0
    w_null: float = W_NULL_DEFAULT
    tau: float = TAU_DEFAULT
    reject_nulls: bool = True

    def __post_init__(self):
        for name in ("n_objects", "materials_per_object", "n_env",
                     "cams_per_setup", "strengths_per_attribute"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        self.attributes = tuple(a for a in ATTRIBUTES if a in set(self.attributes))
        if not self.attributes:
            raise ValueError("attributes must be non-empty")
        unknown = set(self.attributes) - set(ATTRIBUTES)
        if unknown:
            raise ValueError(f"unknown attributes {unknown}")
        if self.sampling_mode not in ("axis", "volume"):
            raise ValueError(f"sampling_mode {self.sampling_mode!r} not in (axis, volume)")
        if self.sampling_mode == "volume" and not set(self.attributes) <= VOLUME_ATTRIBUTES:
            raise ValueError("volume sampling only supports albedo/roughness/metallic")
        if self.resolution < 8:
            raise ValueError("resolution below 8x8")

    def to_dict(self) -> dict:
        return {
            "n_objects": self.n_objects,
            "materials_per_object": self.materials_per_object,
            "n_env": self.n_env,
            "cams_per_setup": self.cams_per_setup,
            "strengths_per_attribute": self.strengths_per_attribute,
            "attributes": list(self.attributes),
            "sampling_mode": self.sampling_mode,
            "resolution": self.resolution,
            "spp": self.spp,
            "seed": self.seed,
            "w_null": self.w_null,
            "tau": self.tau,
            "reject_nulls": self.reject_nulls,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if "attributes" in d:
            d["attributes"] = tuple(d["attributes"])
        return cls(**d)


@dataclass
class SceneRecord:
    """Everything needed to re-render one scene deterministically."""

    scene_id: str
    object_class: str
    geometry_spec: dict
    base_material: Material
    ground_material: Material
    env: ProceduralSky
    cameras: list
    strengths: list = field(default_factory=list)  # includes exactly one zero
    seed: int = 0


def _sample_material(rng: np.random.Generator) -> Material:
    if rng.random() < 0.3:
        a = tuple(rng.uniform(0.05, 0.95, 3))
        b = tuple(rng.uniform(0.05, 0.95, 3))
        base = Checker(a, b, scale=float(rng.uniform(1.5, 4.0)))
    else:
        base = tuple(rng.uniform(0.05, 0.95, 3))
    return Material(
        base_color=base,
        roughness=float(rng.uniform(0.0, 1.0)),
        metallic=float(rng.uniform(0.0, 1.0)),
        transmission=0.0,
        ior=float(rng.uniform(1.3, 1.6)),
    )


def _sample_env(rng: np.random.Generator) -> ProceduralSky:
    az = rng.uniform(0, 2 * np.pi)
    el = rng.uniform(np.radians(25), np.radians(70))
    return ProceduralSky(
        horizon_color=rng.uniform(0.3, 0.9, 3),
        zenith_color=rng.uniform(0.1, 0.6, 3),
        sun_direction=[math.cos(el) * math.cos(az), math.cos(el) * math.sin(az),
                       math.sin(el)],
        sun_intensity=float(rng.uniform(8.0, 30.0)),
        ground_color=rng.uniform(0.15, 0.35, 3),
    )


def _sample_cameras(rng: np.random.Generator, n: int, target_z: float,
                    obj_radius: float, resolution: int) -> list:
    cams = []
    for _ in range(n):
        az = rng.uniform(0, 2 * np.pi)
        el = rng.uniform(np.radians(10), np.radians(60))
        fov = rng.uniform(30.0, 70.0)
        dist = obj_radius * 1.35 / math.tan(math.radians(fov) / 2)
        pos = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az),
                        math.sin(el)]) * dist
        pos[2] += target_z
        cams.append(Camera(position=pos, look_at=(0.0, 0.0, target_z),
                           vertical_fov=fov, resolution=(resolution, resolution)))
    return cams


def sample_strengths(config: DatasetConfig, rng: np.random.Generator) -> list:
    """Zero control plus stratified strength vectors per the sampling mode."""
    active = list(config.attributes)
    n = config.strengths_per_attribute
    out = [EditStrength.zero()]
    if config.sampling_mode == "axis":
        for attr in active:
            lo, hi = ATTRIBUTE_RANGES[attr]
            for i in range(n):
                v = lo + (i + rng.random()) / n * (hi - lo)
                out.append(EditStrength.from_mapping({attr: v}))
    else:
        total = n * len(active)
        columns = {}
        for attr in active:
            lo, hi = ATTRIBUTE_RANGES[attr]
            vals = lo + (np.arange(total) + rng.random(total)) / total * (hi - lo)
            columns[attr] = rng.permutation(vals)  # Latin-hypercube style
        for i in range(total):
            out.append(EditStrength.from_mapping({a: float(columns[a][i]) for a in active}))
    return out


def sample_scene(config: DatasetConfig, rng: np.random.Generator,
                 scene_id: str = None) -> SceneRecord:
    """Draw object, material, environment, cameras and strengths for one scene."""
    obj_class = OBJECT_CLASSES[rng.integers(len(OBJECT_CLASSES))]
    radius = float(rng.uniform(0.7, 1.1))
    if obj_class == "sphere":
        spec = {"kind": "sphere", "radius": radius}
        target_z = radius
    elif obj_class == "box":
        half = rng.uniform(0.5, 0.9, 3)
        spec = {"kind": "box", "half": [float(v) for v in half]}
        target_z = float(half[2])
        radius = float(np.linalg.norm(half))
    else:
        mesh_seed = int(rng.integers(0, 2**31 - 1))
        spec = {"kind": "blob", "radius": radius, "bump": float(rng.uniform(0.05, 0.18)),
                "mesh_seed": mesh_seed, "subdivisions": 2}
        target_z = radius * 1.05
    base = _sample_material(rng)
    ground_gray = float(rng.uniform(0.3, 0.7))
    ground = Material(base_color=(ground_gray,) * 3, roughness=0.75, metallic=0.0)
    # Environments are drawn from a small per-dataset pool, mirroring a map library.
    env_pool_idx = int(rng.integers(config.n_env))
    env = _sample_env(np.random.default_rng([config.seed, 0xE27, env_pool_idx]))
    cameras = _sample_cameras(rng, config.cams_per_setup, target_z, radius,
                              config.resolution)
    strengths = sample_strengths(config, rng)
    seed = int(rng.integers(0, 2**31 - 1))
    if scene_id is None:
        scene_id = f"{config.seed:06d}_{seed:08x}"
    return SceneRecord(scene_id=scene_id, object_class=obj_class, geometry_spec=spec,
                       base_material=base, ground_material=ground, env=env,
                       cameras=cameras, strengths=strengths, seed=seed)


def build_geometry(spec: dict):
    kind = spec["kind"]
    if kind == "sphere":
        return Sphere((0.0, 0.0, spec["radius"]), spec["radius"])
    if kind == "box":
        half = np.asarray(spec["half"])
        return Box(-half + [0, 0, half[2]], half + [0, 0, half[2]])
    if kind == "blob":
        mesh = make_icosphere(spec.get("subdivisions", 3), spec["radius"],
                              bump_amplitude=spec["bump"],
                              rng=np.random.default_rng(spec["mesh_seed"]))
        lift = -mesh.vertices[:, 2].min()
        return type(mesh)(mesh.vertices + [0.0, 0.0, lift], mesh.faces)
    raise ValueError(f"unknown geometry kind {kind!r}")


def build_scene(record: SceneRecord, camera_index: int,
                strength: EditStrength = None) -> Scene:
    """Materialize a renderable scene, applying an optional attribute edit."""
    geom = build_geometry(record.geometry_spec)
    mat = record.base_material
    if strength is not None:
        mat = apply_attribute_edits(mat, strength)
    return Scene(
        objects=[SceneObject(geom, mat, record.object_class),
                 SceneObject(GroundPlane(0.0), record.ground_material, "ground")],
        env=record.env,
        camera=record.cameras[camera_index],
    )


def should_reject_null(context: ImageBuffer, edited: ImageBuffer,
                       tau: float = TAU_DEFAULT, w_null: float = W_NULL_DEFAULT,
                       rng: np.random.Generator = None) -> bool:
    """Rejection-sample near-identical pairs: drop with probability w_null
    when the mean squared pixel error falls below tau."""
    if context.pixels.shape != edited.pixels.shape:
        raise ValueError("context/edited dimension mismatch")
    if mean_squared_error(context, edited) >= tau:
        return False
    if rng is None:
        rng = np.random.default_rng()
    return bool(rng.random() < w_null)


def generate_dataset(config: DatasetConfig, out_dir, threads: int = 1,
                     log=None) -> "Manifest":
    """Render the full dataset to disk and return its manifest."""
    from .datasetio import ExampleMeta, Manifest, build_prompt, save_manifest, write_example

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    reject_rng = np.random.default_rng([config.seed, 0x4E17])
    examples = []
    nulls_kept = 0
    nulls_dropped = 0
    scene_records = []
    n_scenes = config.n_objects * config.materials_per_object
    for i in range(n_scenes):
        scene_rng = np.random.default_rng([config.seed, i])
        scene_records.append(sample_scene(config, scene_rng, scene_id=f"{config.seed:06d}_{i:03d}"))

    prompt = build_prompt(list(config.attributes), "{object_class}")
    total_setups = n_scenes * config.cams_per_setup
    done = 0
    for record in scene_records:
        for cam_idx in range(len(record.cameras)):
            control_scene = build_scene(record, cam_idx, None)
            control_lin = render_image(control_scene, config.spp,
                                       seed=record.seed + cam_idx, threads=threads)
            control = tonemap(control_lin)
            rel_dir = Path(f"scene_{record.scene_id}") / f"cam_{cam_idx}"
            for k, s in enumerate(record.strengths):
                if s.is_zero():
                    continue  # the control render stands in for s=0
                edit_scene = build_scene(record, cam_idx, s)
                edited_lin = render_image(edit_scene, config.spp,
                                          seed=record.seed + cam_idx, threads=threads)
                edited = tonemap(edited_lin)
                mse = mean_squared_error(control, edited)
                if config.reject_nulls and mse < config.tau:
                    if should_reject_null(control, edited, config.tau,
                                          config.w_null, reject_rng):
                        nulls_dropped += 1
                        continue
                    nulls_kept += 1
                meta = ExampleMeta(
                    scene_id=record.scene_id,
                    camera_id=cam_idx,
                    strength=s,
                    object_class=record.object_class,
                    attribute_names=list(config.attributes),
                    prompt=build_prompt(list(config.attributes), record.object_class),
                    seed=record.seed + cam_idx,
                    control_path=str(rel_dir / "control.png"),
                    edited_path=str(rel_dir / f"edit_{k}.png"),
                )
                write_example(out_dir, meta, control, edited)
                examples.append(meta)
            done += 1
            if log:
                log(f"[{done}/{total_setups}] scene {record.scene_id} cam {cam_idx}: "
                    f"{len(examples)} examples")
    manifest = Manifest(
        format_version=1,
        config=config.to_dict(),
        examples=examples,
        counts={"total": len(examples), "nulls_kept": nulls_kept,
                "nulls_dropped": nulls_dropped},
    )
    save_manifest(out_dir, manifest)
    return manifest


def load_dataset_config(path) -> DatasetConfig:
    """Read the [dataset] table of a TOML config file."""
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as f:
        data = tomllib.load(f)
    if "dataset" not in data:
        raise ValueError(f"{path}: missing [dataset] section")
    return DatasetConfig.from_dict(data["dataset"])
