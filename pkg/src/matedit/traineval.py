"""Training loop and the evaluation suite: PSNR/SSIM, strength-sweep
monotonicity and smoothness, masked-edit leakage, and the axis-only vs.
volume-sampled comparison."""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import spearmanr

from .datasetio import (Manifest, build_prompt, iterate_training_pairs,
                        load_manifest, split_by_scene_hash)
from .diffusion import (GuidanceConfig, LatentCodec, NoiseSchedule,
                        active_in_canonical_order, assemble_conditioning,
                        forward_noise, make_schedule,
                        sample as diffusion_sample,
                        sample_conditioning_dropout)
from .materials import ATTRIBUTE_RANGES, EditStrength
from .net import (ArchDescriptor, Denoiser, OptimizerState, adam_step,
                  checkpoint_hash, load_model, save_model)
from .render import DISPLAY, ImageBuffer, primary_object_mask, render_image, tonemap, write_png
from .scenegen import DatasetConfig, build_scene, sample_scene


@dataclass
class TrainConfig:
    dataset_path: str
    steps: int = 3000
    batch_size: int = 8
    lr: float = 2e-4
    base_width: int = 32
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    holdout_fraction: float = 0.25
    out_path: str = "model.ckpt"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def load_train_config(path, dataset_path=None) -> TrainConfig:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as f:
        data = tomllib.load(f)
    section = dict(data.get("train", {}))
    gcfg = GuidanceConfig()
    for k in ("s_image", "s_text", "p_drop_prompt", "p_drop_context", "p_drop_both"):
        if k in section:
            setattr(gcfg, k, section.pop(k))
    if dataset_path is not None:
        section["dataset_path"] = dataset_path
    return TrainConfig(guidance=gcfg, **section)


def build_vocab(manifest: Manifest) -> dict:
    classes = sorted({m.object_class for m in manifest.examples})
    attrs = list(manifest.config["attributes"])
    vocab = {}
    for i, cls in enumerate(classes, start=1):
        vocab[Denoiser.vocab_key(attrs, cls)] = i
    return vocab


def _batched_loss_and_grads(denoiser: Denoiser, examples, schedule, gcfg, rng,
                            codec: LatentCodec):
    """Stacked forward/backward over a batch; mean of per-example MSEs."""
    chans, ts, tokens, eps_list = [], [], [], []
    for ex in examples:
        z0 = codec.encode(ex.edited)
        ctx = codec.encode(ex.context)
        t = int(rng.integers(schedule.T))
        eps = rng.standard_normal(z0.shape)
        z_t = forward_noise(z0, t, eps, schedule)
        drop_prompt, drop_context = sample_conditioning_dropout(gcfg, rng)
        if drop_context:
            ctx = np.zeros_like(ctx)
        token = (denoiser.null_token if drop_prompt
                 else denoiser.token_id(ex.attribute_names, ex.object_class))
        cond = assemble_conditioning(
            z_t, ctx, ex.strength, active_in_canonical_order(ex.attribute_names))
        chans.append(cond.channels)
        ts.append(t)
        tokens.append(token)
        eps_list.append(eps)
    x = np.stack(chans)
    eps = np.stack(eps_list)
    pred, trace = denoiser.forward(x, ts, tokens)
    diff = pred - eps
    loss = float(np.mean(diff * diff))
    grads = denoiser.backward(trace, 2.0 * diff / diff.size)
    return loss, grads


def train(config: TrainConfig, log=print):
    """Train a denoiser on a rendered dataset; returns the checkpoint path."""
    root = Path(config.dataset_path)
    manifest = load_manifest(root)
    attrs = tuple(manifest.config["attributes"])
    schedule = make_schedule()
    codec = LatentCodec()
    vocab = build_vocab(manifest)
    arch = ArchDescriptor(in_channels=3 + 3 + len(attrs),
                          n_tokens=len(vocab) + 1,
                          base_width=config.base_width)
    from .net.unet import UNet
    unet = UNet(arch)
    params = unet.init_params(np.random.default_rng([config.seed, 1]), np.float32)
    denoiser = Denoiser(arch=arch, params=params, vocab=vocab,
                        active_attributes=attrs,
                        schedule_config={"T": schedule.T,
                                         "beta_start": schedule.beta_start,
                                         "beta_end": schedule.beta_end,
                                         "kind": schedule.kind},
                        codec_mode=codec.mode,
                        train_resolution=int(manifest.config["resolution"]))
    if log:
        log(f"training on {root} | {len(manifest.examples)} examples | "
            f"{denoiser.param_count()} parameters | attrs {attrs}")

    train_metas, holdout_metas = split_by_scene_hash(manifest, config.holdout_fraction)
    if not train_metas:
        raise ValueError("train split is empty; lower holdout_fraction")
    train_manifest = Manifest(manifest.format_version, manifest.config, train_metas,
                              {"total": len(train_metas), "nulls_kept": 0,
                               "nulls_dropped": 0})
    pairs = iterate_training_pairs(root, train_manifest, np.random.default_rng(
        [config.seed, 2]))
    opt = OptimizerState(lr=config.lr)
    loss_rng = np.random.default_rng([config.seed, 3])
    out_path = Path(config.out_path)
    consecutive_bad = 0
    losses = []
    t_start = time.time()
    for step in range(1, config.steps + 1):
        batch = [next(pairs) for _ in range(config.batch_size)]
        try:
            loss, grads = _batched_loss_and_grads(denoiser, batch, schedule,
                                                  config.guidance, loss_rng, codec)
            consecutive_bad = 0
        except FloatingPointError:
            consecutive_bad += 1
            if consecutive_bad >= 2:
                raise RuntimeError(
                    f"non-finite loss twice consecutively at step {step}; aborting")
            continue
        adam_step(denoiser.params, grads, opt)
        losses.append(loss)
        if log and (step % config.log_every == 0 or step == 1):
            recent = float(np.mean(losses[-config.log_every:]))
            log(f"step {step}/{config.steps} loss {recent:.4f} "
                f"({(time.time() - t_start):.0f}s)")
        if config.checkpoint_every and step % config.checkpoint_every == 0:
            save_model(out_path, denoiser, optimizer=opt, lr=config.lr)
    save_model(out_path, denoiser, optimizer=opt, lr=config.lr)
    if log:
        log(f"saved {out_path} ({checkpoint_hash(out_path)[:12]})")
    return out_path, losses, [m.scene_id for m in holdout_metas]


# --- Metrics ------------------------------------------------------------------

PSNR_CAP = 99.0


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """10*log10(1/MSE) on display-encoded images, capped at 99 dB."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("psnr: shape mismatch")
    if a.encoding != DISPLAY or b.encoding != DISPLAY:
        raise ValueError("psnr expects display-encoded images")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * math.log10(1.0 / mse))


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean local SSIM on luminance: Gaussian window sigma=1.5 size 11,
    K1=0.01, K2=0.03, dynamic range 1.  The mean runs over fully valid
    windows only (border of window//2 cropped)."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("ssim: shape mismatch")
    x = a.luminance()
    y = b.luminance()
    if min(x.shape) < 11:
        raise ValueError("ssim needs images at least 11x11")
    c1, c2 = 0.01**2, 0.03**2
    blur = lambda img: ndimage.gaussian_filter(img, sigma=1.5, truncate=(5.0 / 1.5))
    mx, my = blur(x), blur(y)
    mxx, myy, mxy = blur(x * x), blur(y * y), blur(x * y)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    pad = 5
    return float(np.mean((num / den)[pad:-pad, pad:-pad]))


# --- Model-driven evaluation ----------------------------------------------------

@dataclass
class EvalScene:
    """A held-out rendering setup the model is probed on."""

    record: object
    camera_index: int
    context: ImageBuffer
    mask: np.ndarray
    object_class: str


def make_eval_scenes(n: int, seed: int, resolution: int = 32, spp: int = 32,
                     attributes=("albedo", "roughness", "metallic"),
                     object_classes=None, min_chroma: float = 0.0,
                     gt_monotone_attrs=None) -> list:
    """Fresh (never-trained) rendering setups for model probing.

    ``object_classes``/``min_chroma`` restrict sampling to scenes where the
    sweep statistics are physically meaningful (the ground-truth renderer
    itself fails them on flat boxes or gray materials).  With
    ``gt_monotone_attrs`` a candidate scene qualifies only if the renderer's
    own sweep passes the monotonicity statistic for those attributes: the
    sanity anchor applied constructively.
    """
    from .materials import Checker
    cfg = DatasetConfig(n_objects=max(n, 1), materials_per_object=1,
                        cams_per_setup=1, strengths_per_attribute=1,
                        attributes=tuple(attributes), resolution=resolution,
                        spp=spp, seed=seed)
    scenes = []
    i = 0
    attempt = 0
    while len(scenes) < n:
        record = sample_scene(cfg, np.random.default_rng([seed, 7000 + attempt]),
                              scene_id=f"eval_{seed:04d}_{i:03d}")
        attempt += 1
        if attempt > 100 * n:
            raise RuntimeError("could not sample enough eval scenes")
        if object_classes and record.object_class not in object_classes:
            continue
        if min_chroma > 0.0:
            base = record.base_material.base_color
            if isinstance(base, Checker):
                spread = max(max(base.a) - min(base.a),
                             max(base.b) - min(base.b))
            else:
                spread = max(base) - min(base)
            if spread < min_chroma:
                continue
        scene = build_scene(record, 0, None)
        linear = render_image(scene, spp, seed=record.seed)
        candidate = EvalScene(record=record, camera_index=0,
                              context=tonemap(linear),
                              mask=primary_object_mask(scene),
                              object_class=record.object_class)
        if gt_monotone_attrs:
            anchored = all(
                strength_sweep(lambda sc, s: gt_edit(sc, s, spp=spp),
                               candidate, attr, n_steps=5).monotonic_ok
                for attr in gt_monotone_attrs)
            if not anchored:
                continue
        scenes.append(candidate)
        i += 1
    return scenes


def model_edit(denoiser: Denoiser, context: ImageBuffer, strength: EditStrength,
               object_class: str, steps: int = 20,
               guidance: GuidanceConfig = None, mask=None,
               seed: int = 0) -> ImageBuffer:
    schedule = make_schedule(**{k: v for k, v in denoiser.schedule_config.items()
                                if k in ("T", "beta_start", "beta_end", "kind")})
    codec = LatentCodec(denoiser.codec_mode)
    return diffusion_sample(denoiser, context, strength,
                            denoiser.active_attributes, schedule, codec,
                            steps=steps, guidance=guidance, mask=mask,
                            object_class=object_class, seed=seed)


def gt_edit(scene: EvalScene, strength: EditStrength, spp: int = 32) -> ImageBuffer:
    edited = build_scene(scene.record, scene.camera_index, strength)
    return tonemap(render_image(edited, spp, seed=scene.record.seed))


@dataclass
class SweepResult:
    frames: list
    strengths: list
    stat_values: list
    spearman: float
    monotonic_ok: bool
    smoothness_ratio: float
    smooth_ok: bool


def _object_stat(image: ImageBuffer, mask: np.ndarray, attribute: str) -> float:
    if attribute == "albedo":
        # per-pixel chroma, normalized so brightness changes do not confound it
        px = image.pixels[mask]
        spread = px.max(axis=1) - px.min(axis=1)
        return float(np.mean(spread / (px.max(axis=1) + px.min(axis=1) + 1e-6)))
    lum = image.luminance()[mask]
    if attribute == "roughness":
        return float(lum.max())
    return float(lum.mean())  # metallic/transparency: mean luminance


def sweep_frames_stats(frames, strengths, mask, attribute):
    stats = [_object_stat(f, mask, attribute) for f in frames]
    if len(set(stats)) <= 1:
        rho = 0.0
    else:
        rho = float(spearmanr(strengths, stats).statistic)
    adj = [float(np.mean((frames[i].pixels - frames[i + 1].pixels) ** 2))
           for i in range(len(frames) - 1)]
    mean_adj = float(np.mean(adj))
    max_adj = float(np.max(adj))
    ratio = max_adj / mean_adj if mean_adj > 0 else 0.0
    return stats, rho, ratio, adj


def strength_sweep(edit_fn, scene: EvalScene, attribute: str,
                   n_steps: int = 8) -> SweepResult:
    """Sweep one attribute linearly and score monotonicity + smoothness.

    ``edit_fn(scene, strength) -> ImageBuffer`` may be the trained model or
    the ground-truth renderer (the sanity anchor).
    """
    if n_steps < 3:
        raise ValueError("n_steps must be >= 3")
    lo, hi = ATTRIBUTE_RANGES[attribute]
    values = np.linspace(lo, hi, n_steps)
    frames = [edit_fn(scene, EditStrength.from_mapping({attribute: float(v)}))
              for v in values]
    stats, rho, ratio, _ = sweep_frames_stats(frames, values, scene.mask, attribute)
    # Negative correlation expected: lower roughness amplifies highlights;
    # higher gray-mix kills chroma.  Metallic darkens with strength.
    monotonic_ok = rho < 0.0
    smooth_ok = ratio <= 3.0
    return SweepResult(frames=frames, strengths=[float(v) for v in values],
                       stat_values=stats, spearman=rho, monotonic_ok=monotonic_ok,
                       smoothness_ratio=ratio, smooth_ok=smooth_ok)


def localization_eval(denoiser: Denoiser, scene: EvalScene, mask: np.ndarray,
                      strength: EditStrength, steps: int = 20,
                      seed: int = 0) -> dict:
    """Leakage of a masked edit: MSE outside the mask / MSE inside."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.sum() == 0:
        raise ValueError("empty mask")
    edited = model_edit(denoiser, scene.context, strength, scene.object_class,
                        steps=steps, mask=mask, seed=seed)
    diff = (edited.pixels - scene.context.pixels) ** 2
    inside = float(diff[mask > 0].mean())
    if np.all(mask > 0):
        return {"kind": "global-edit", "inside_mse": inside,
                "outside_mse": None, "leakage_ratio": None}
    outside = float(diff[mask == 0].mean())
    if strength.is_zero() or inside < 1e-6:
        return {"kind": "null", "inside_mse": inside, "outside_mse": outside,
                "leakage_ratio": None}
    return {"kind": "masked-edit", "inside_mse": inside, "outside_mse": outside,
            "leakage_ratio": outside / inside}


@dataclass
class EvalReport:
    checkpoint_hash: str
    manifest_hash: str
    per_attribute: dict
    monotonicity: dict
    smoothness: dict
    localization: dict
    runtime_seconds: float
    notes: str = ("LPIPS is intentionally omitted; smoothness statistic + SSIM "
                  "stand in for it.")

    def to_dict(self) -> dict:
        return {
            "checkpoint_hash": self.checkpoint_hash,
            "manifest_hash": self.manifest_hash,
            "per_attribute": self.per_attribute,
            "monotonicity": self.monotonicity,
            "smoothness": self.smoothness,
            "localization": self.localization,
            "runtime_seconds": self.runtime_seconds,
            "notes": self.notes,
        }


def evaluate_on_holdout(denoiser: Denoiser, dataset_root, manifest: Manifest,
                        holdout_fraction: float = 0.25, steps: int = 20,
                        guidance: GuidanceConfig = None, limit: int = None,
                        seed: int = 0, log=None) -> dict:
    """Per-attribute PSNR/SSIM of model edits against held-out GT renders."""
    from .render import read_png
    root = Path(dataset_root)
    _, holdout = split_by_scene_hash(manifest, holdout_fraction)
    if not holdout:
        raise ValueError("no held-out examples; adjust holdout_fraction")
    rng = np.random.default_rng(seed)
    if limit is not None and len(holdout) > limit:
        idx = rng.choice(len(holdout), size=limit, replace=False)
        holdout = [holdout[i] for i in sorted(idx)]
    per_attr: dict = {}
    for i, meta in enumerate(holdout):
        context = read_png(root / meta.control_path)
        target = read_png(root / meta.edited_path)
        out = model_edit(denoiser, context, meta.strength, meta.object_class,
                         steps=steps, guidance=guidance, seed=seed)
        nonzero = [a for a in meta.attribute_names
                   if meta.strength.component(a) != 0.0]
        key = nonzero[0] if len(nonzero) == 1 else "joint"
        per_attr.setdefault(key, {"psnr": [], "ssim": []})
        per_attr[key]["psnr"].append(psnr(out, target))
        per_attr[key]["ssim"].append(ssim(out, target))
        if log and (i + 1) % 10 == 0:
            log(f"eval {i + 1}/{len(holdout)}")
    return {k: {"psnr": float(np.mean(v["psnr"])),
                "ssim": float(np.mean(v["ssim"])),
                "count": len(v["psnr"])}
            for k, v in per_attr.items()}


def contact_sheet(frames, path) -> None:
    """One row of sweep frames, written as a PNG grid."""
    pixels = np.concatenate([f.pixels for f in frames], axis=1)
    write_png(path, ImageBuffer(pixels, DISPLAY))


def joint_edit_strengths(n_random: int, seed: int) -> list:
    """Held-out (s_a, s_r, s_m) triples, always including (1, -1, 1)."""
    rng = np.random.default_rng(seed)
    out = [EditStrength(s_a=1.0, s_r=-1.0, s_m=1.0)]
    for _ in range(n_random):
        out.append(EditStrength(s_a=float(rng.uniform(0.25, 1.0)),
                                s_r=float(rng.uniform(-1.0, 1.0)),
                                s_m=float(rng.uniform(-1.0, 1.0))))
    return out


def axis_vs_volume_experiment(axis_root, volume_root, train_template: dict,
                              n_eval_scenes: int = 4, n_joint: int = 4,
                              eval_seed: int = 99, spp: int = 32,
                              log=print) -> dict:
    """Train identical models on the two datasets and compare joint edits."""
    axis_manifest = load_manifest(axis_root)
    vol_manifest = load_manifest(volume_root)
    for key in ("n_objects", "materials_per_object", "cams_per_setup",
                "strengths_per_attribute", "resolution"):
        if axis_manifest.config[key] != vol_manifest.config[key]:
            raise ValueError(f"dataset size mismatch on {key}: "
                             f"{axis_manifest.config[key]} vs {vol_manifest.config[key]}")
    results = {}
    models = {}
    for name, root in (("axis", axis_root), ("volume", volume_root)):
        cfg = TrainConfig(dataset_path=str(root),
                          out_path=str(Path(root) / "model.ckpt"),
                          **train_template)
        path, losses, _ = train(cfg, log=log)
        models[name] = load_model(path)
        results[f"{name}_final_loss"] = float(np.mean(losses[-50:]))
    scenes = make_eval_scenes(n_eval_scenes, eval_seed,
                              resolution=axis_manifest.config["resolution"], spp=spp)
    strengths = joint_edit_strengths(n_joint, eval_seed)
    scores = {"axis": [], "volume": []}
    single_scores = {"axis": [], "volume": []}
    for scene in scenes:
        for s in strengths:
            target = gt_edit(scene, s, spp=spp)
            for name, model in models.items():
                out = model_edit(model, scene.context, s, scene.object_class,
                                 seed=eval_seed)
                scores[name].append(psnr(out, target))
        for attr in ("albedo", "roughness", "metallic"):
            s = EditStrength.from_mapping({attr: 0.8 if attr == "albedo" else -0.8})
            target = gt_edit(scene, s, spp=spp)
            for name, model in models.items():
                out = model_edit(model, scene.context, s, scene.object_class,
                                 seed=eval_seed)
                single_scores[name].append(psnr(out, target))
    results.update({
        "joint_psnr_axis": float(np.mean(scores["axis"])),
        "joint_psnr_volume": float(np.mean(scores["volume"])),
        "single_psnr_axis": float(np.mean(single_scores["axis"])),
        "single_psnr_volume": float(np.mean(single_scores["volume"])),
        "n_joint_edits": len(scores["axis"]),
    })
    results["volume_beats_axis_on_joint"] = \
        results["joint_psnr_volume"] > results["joint_psnr_axis"]
    return results
