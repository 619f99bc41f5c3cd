"""On-disk dataset format: PNG pairs, JSON sidecars and a versioned manifest.

Layout, relative to the dataset root:

    manifest.json
    scene_<id>/cam_<k>/control.png
    scene_<id>/cam_<k>/edit_<j>.png
    scene_<id>/cam_<k>/edit_<j>.json     (sidecar, same fields as manifest entry)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .materials import EditStrength
from .render import ImageBuffer, read_png, write_png

FORMAT_VERSION = 1


def build_prompt(attribute_names: list, object_class: str) -> str:
    """Instruction template: 'Change the <attribute_name> of the <object_class>.'"""
    if not attribute_names:
        raise ValueError("at least one attribute name required")
    if len(attribute_names) == 1:
        attrs = attribute_names[0]
    else:
        attrs = ", ".join(attribute_names[:-1]) + " and " + attribute_names[-1]
    return f"Change the {attrs} of the {object_class}."


@dataclass
class ExampleMeta:
    scene_id: str
    camera_id: int
    strength: EditStrength
    object_class: str
    attribute_names: list
    prompt: str
    seed: int
    control_path: str
    edited_path: str

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "camera_id": self.camera_id,
            "strength": {"s_a": self.strength.s_a, "s_r": self.strength.s_r,
                         "s_m": self.strength.s_m, "s_t": self.strength.s_t},
            "object_class": self.object_class,
            "attribute_names": list(self.attribute_names),
            "prompt": self.prompt,
            "seed": self.seed,
            "control_path": self.control_path,
            "edited_path": self.edited_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExampleMeta":
        return cls(
            scene_id=d["scene_id"],
            camera_id=int(d["camera_id"]),
            strength=EditStrength(**d["strength"]),
            object_class=d["object_class"],
            attribute_names=list(d["attribute_names"]),
            prompt=d["prompt"],
            seed=int(d["seed"]),
            control_path=d["control_path"],
            edited_path=d["edited_path"],
        )


@dataclass
class Manifest:
    format_version: int
    config: dict
    examples: list
    counts: dict

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config,
            "counts": self.counts,
            "examples": [m.to_dict() for m in self.examples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"manifest format_version {version} != {FORMAT_VERSION}")
        examples = [ExampleMeta.from_dict(e) for e in d["examples"]]
        counts = d["counts"]
        if counts.get("total") != len(examples):
            raise ValueError(f"manifest counts.total {counts.get('total')} "
                             f"!= {len(examples)} entries")
        return cls(version, d["config"], examples, counts)

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrainingExample:
    """One (context, edited target, strength, prompt) training pair."""

    context: ImageBuffer
    edited: ImageBuffer
    strength: EditStrength
    prompt: str
    object_class: str
    attribute_names: list
    meta: ExampleMeta = field(repr=False, default=None)


def _sidecar_path(edited_path: str) -> str:
    return str(Path(edited_path).with_suffix(".json"))


def write_example(root, meta: ExampleMeta, control: ImageBuffer,
                  edited: ImageBuffer) -> None:
    if control.pixels.shape != edited.pixels.shape:
        raise ValueError("control/edited resolution mismatch")
    root = Path(root)
    try:
        control_file = root / meta.control_path
        if not control_file.exists():
            write_png(control_file, control)
        write_png(root / meta.edited_path, edited)
        sidecar = root / _sidecar_path(meta.edited_path)
        sidecar.write_text(json.dumps(meta.to_dict(), indent=1), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing example under {root}: {exc}") from exc


def read_example(root, meta_or_sidecar) -> tuple:
    """Reload (meta, control, edited) from a sidecar path or an ExampleMeta."""
    root = Path(root)
    if isinstance(meta_or_sidecar, ExampleMeta):
        meta = meta_or_sidecar
    else:
        sidecar = root / meta_or_sidecar
        if not sidecar.exists():
            raise FileNotFoundError(f"missing sidecar {sidecar}")
        meta = ExampleMeta.from_dict(json.loads(sidecar.read_text(encoding="utf-8")))
    control = read_png(root / meta.control_path)
    edited = read_png(root / meta.edited_path)
    return meta, control, edited


def save_manifest(root, manifest: Manifest) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=1), encoding="utf-8")


def load_manifest(root) -> Manifest:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    return Manifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


def verify_dataset(root) -> list:
    """Cross-check manifest entries against the filesystem; returns problems."""
    root = Path(root)
    problems = []
    manifest = load_manifest(root)
    referenced = set()
    for meta in manifest.examples:
        for rel in (meta.control_path, meta.edited_path, _sidecar_path(meta.edited_path)):
            referenced.add(rel)
            if not (root / rel).exists():
                problems.append(f"missing file {rel}")
        if not meta.strength.is_finite() or meta.strength.is_zero():
            problems.append(f"{meta.edited_path}: edited example with zero/invalid strength")
        if meta.prompt != build_prompt(meta.attribute_names, meta.object_class):
            problems.append(f"{meta.edited_path}: prompt does not match template")
    for png in root.rglob("edit_*.png"):
        rel = str(png.relative_to(root))
        if rel not in referenced:
            problems.append(f"unreferenced file {rel}")
    if manifest.counts.get("total") != len(manifest.examples):
        problems.append("counts.total disagrees with example entries")
    return problems


def split_by_scene_hash(manifest: Manifest, holdout_fraction: float = 0.25):
    """Deterministic train/holdout split keyed on a scene_id hash."""
    train, holdout = [], []
    threshold = int(holdout_fraction * 1000)
    for meta in manifest.examples:
        h = int(hashlib.sha256(meta.scene_id.encode()).hexdigest(), 16) % 1000
        (holdout if h < threshold else train).append(meta)
    return train, holdout


def holdout_scene_ids(manifest: Manifest, holdout_fraction: float = 0.25):
    _, holdout = split_by_scene_hash(manifest, holdout_fraction)
    return sorted({m.scene_id for m in holdout})


def iterate_training_pairs(root, manifest: Manifest, rng: np.random.Generator):
    """Infinite uniform stream of TrainingExample drawn over edited images."""
    if not manifest.examples:
        raise ValueError("manifest has no examples")
    root = Path(root)
    cache: dict[str, ImageBuffer] = {}

    def load(rel: str) -> ImageBuffer:
        if rel not in cache:
            cache[rel] = read_png(root / rel)
        return cache[rel]

    n = len(manifest.examples)
    while True:
        meta = manifest.examples[int(rng.integers(n))]
        yield TrainingExample(
            context=load(meta.control_path),
            edited=load(meta.edited_path),
            strength=meta.strength,
            prompt=meta.prompt,
            object_class=meta.object_class,
            attribute_names=meta.attribute_names,
            meta=meta,
        )
