"""Command-line entry points for every pipeline stage."""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_render_dataset(args) -> int:
    from .scenegen import DatasetConfig, generate_dataset, load_dataset_config
    if args.config:
        config = load_dataset_config(args.config)
    else:
        config = DatasetConfig()
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out)
    try:
        manifest = generate_dataset(config, out, threads=args.threads, log=_log)
    except KeyboardInterrupt:
        _log(f"interrupted; removing partial dataset {out}")
        shutil.rmtree(out, ignore_errors=True)
        return 1
    _log(f"wrote {manifest.counts['total']} examples "
         f"(nulls kept {manifest.counts['nulls_kept']}, "
         f"dropped {manifest.counts['nulls_dropped']}) to {out}")
    return 0


def cmd_verify_dataset(args) -> int:
    from .datasetio import verify_dataset
    problems = verify_dataset(args.dataset)
    for p in problems:
        _log(f"PROBLEM: {p}")
    if problems:
        return 1
    _log("dataset verifies clean")
    return 0


def cmd_train(args) -> int:
    from .traineval import TrainConfig, load_train_config, train
    if args.config:
        config = load_train_config(args.config, dataset_path=args.dataset)
    else:
        config = TrainConfig(dataset_path=args.dataset)
    if args.steps is not None:
        config.steps = args.steps
    if args.seed is not None:
        config.seed = args.seed
    if args.lr is not None:
        config.lr = args.lr
    if args.batch_size is not None:
        config.batch_size = args.batch_size
    config.out_path = args.out
    train(config, log=_log)
    return 0


def _parse_strengths(attrs, strengths):
    if len(attrs) != len(strengths):
        raise SystemExit("--attr and --strength must be paired")
    return {a: s for a, s in zip(attrs, strengths)}


def cmd_edit(args) -> int:
    from .materials import EditStrength
    from .net import load_model
    from .diffusion import GuidanceConfig
    from .render import read_png, write_png
    from .traineval import model_edit
    denoiser = load_model(args.model)
    context = read_png(args.image)
    if (context.width, context.height) != (denoiser.train_resolution,) * 2:
        from .service import letterbox
        canvas, _ = letterbox(context.pixels, denoiser.train_resolution)
        from .render import DISPLAY, ImageBuffer
        context = ImageBuffer(canvas, DISPLAY)
    strengths = _parse_strengths(args.attr, args.strength)
    unknown = set(strengths) - set(denoiser.active_attributes)
    if unknown:
        _log(f"error: model does not support attributes {sorted(unknown)}; "
             f"supported: {list(denoiser.active_attributes)}")
        return 1
    mask = None
    if args.mask:
        m = read_png(args.mask)
        mask = (m.pixels.mean(axis=2) > 0.5).astype(np.float64)
    seed = args.seed if args.seed is not None else 0
    t0 = time.time()
    out = model_edit(denoiser, context, EditStrength.from_mapping(strengths),
                     args.object_class or None, steps=args.steps,
                     guidance=GuidanceConfig(args.guidance_image, args.guidance_text),
                     mask=mask, seed=seed)
    write_png(args.out, out)
    sidecar = Path(args.out).with_suffix(".json")
    sidecar.write_text(json.dumps({
        "image": str(args.image), "strengths": strengths,
        "object_class": args.object_class, "steps": args.steps, "seed": seed,
        "guidance": {"image": args.guidance_image, "text": args.guidance_text},
        "mask": str(args.mask) if args.mask else None,
        "elapsed_s": time.time() - t0,
    }, indent=1))
    _log(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    from .materials import ATTRIBUTE_RANGES, EditStrength
    from .net import load_model
    from .render import read_png, write_png
    from .traineval import model_edit
    denoiser = load_model(args.model)
    if args.attr not in denoiser.active_attributes:
        _log(f"error: model supports {list(denoiser.active_attributes)}")
        return 1
    context = read_png(args.image)
    lo, hi = ATTRIBUTE_RANGES[args.attr]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    for i, v in enumerate(np.linspace(lo, hi, args.frames)):
        out = model_edit(denoiser, context,
                         EditStrength.from_mapping({args.attr: float(v)}),
                         args.object_class or None, steps=args.steps, seed=seed)
        write_png(out_dir / f"sweep_{args.attr}_{i:02d}.png", out)
        _log(f"frame {i + 1}/{args.frames} (s={v:+.3f})")
    return 0


def cmd_eval(args) -> int:
    from .datasetio import load_manifest
    from .net import checkpoint_hash, load_model
    from .traineval import (EvalReport, contact_sheet, evaluate_on_holdout,
                            gt_edit, localization_eval, make_eval_scenes,
                            model_edit, strength_sweep)
    t0 = time.time()
    denoiser = load_model(args.model)
    manifest = load_manifest(args.dataset)
    per_attr = evaluate_on_holdout(denoiser, args.dataset, manifest,
                                   limit=args.limit, seed=args.seed or 0,
                                   log=_log)
    scenes = make_eval_scenes(args.scenes, (args.seed or 0) + 90,
                              resolution=manifest.config["resolution"],
                              spp=manifest.config["spp"],
                              attributes=tuple(manifest.config["attributes"]))
    mono, smooth = {}, {}
    sweep_dir = Path(args.out).parent if args.out else Path(".")
    for attr in denoiser.active_attributes:
        passes_m = passes_s = 0
        for i, scene in enumerate(scenes):
            res = strength_sweep(
                lambda sc, s: model_edit(denoiser, sc.context, s,
                                         sc.object_class, seed=args.seed or 0),
                scene, attr, n_steps=args.sweep_frames)
            passes_m += res.monotonic_ok
            passes_s += res.smooth_ok
            if i == 0 and args.out:
                contact_sheet(res.frames,
                              sweep_dir / f"sweep_{attr}.png")
        mono[attr] = {"passed": passes_m, "total": len(scenes)}
        smooth[attr] = {"passed": passes_s, "total": len(scenes)}
        _log(f"{attr}: monotonic {passes_m}/{len(scenes)}, "
             f"smooth {passes_s}/{len(scenes)}")
    half_mask = np.zeros((denoiser.train_resolution,) * 2)
    half_mask[:, :denoiser.train_resolution // 2] = 1.0
    loc = localization_eval(denoiser, scenes[0], half_mask,
                            _overdrive_strength(denoiser), seed=args.seed or 0)
    report = EvalReport(
        checkpoint_hash=checkpoint_hash(args.model),
        manifest_hash=manifest.sha256(),
        per_attribute=per_attr,
        monotonicity=mono,
        smoothness=smooth,
        localization=loc,
        runtime_seconds=time.time() - t0,
    )
    payload = json.dumps(report.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(payload)
        _log(f"report written to {args.out}")
    else:
        print(payload)
    return 0


def _overdrive_strength(denoiser):
    from .materials import EditStrength
    attr = denoiser.active_attributes[0]
    return EditStrength.from_mapping({attr: 2.0})


def cmd_compare_sampling(args) -> int:
    from .traineval import axis_vs_volume_experiment
    template = {"steps": args.steps, "seed": args.seed or 0,
                "batch_size": args.batch_size, "lr": args.lr}
    report = axis_vs_volume_experiment(args.axis, args.volume, template,
                                       n_eval_scenes=args.scenes, log=_log)
    payload = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(payload)
    else:
        print(payload)
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    serve(args.model, port=args.port, queue_limit=args.queue,
          frontend_dir=args.frontend, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matedit",
                                description="material editing pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("render-dataset", help="render a paired-image dataset")
    d.add_argument("--config", help="TOML config with a [dataset] section")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--threads", type=int, default=1)
    d.set_defaults(func=cmd_render_dataset)

    v = sub.add_parser("verify-dataset", help="check manifest vs files")
    v.add_argument("--dataset", required=True)
    v.set_defaults(func=cmd_verify_dataset)

    t = sub.add_parser("train", help="train the denoiser")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="TOML config with a [train] section")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("edit", help="edit one image with a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--image", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--attr", action="append", default=[])
    e.add_argument("--strength", action="append", type=float, default=[])
    e.add_argument("--mask")
    e.add_argument("--object-class", default="")
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--seed", type=int)
    e.add_argument("--guidance-image", type=float, default=1.0)
    e.add_argument("--guidance-text", type=float, default=1.0)
    e.set_defaults(func=cmd_edit)

    s = sub.add_parser("sweep", help="render a linear strength sweep")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--attr", required=True)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--object-class", default="")
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    ev = sub.add_parser("eval", help="evaluation report on held-out data")
    ev.add_argument("--model", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out")
    ev.add_argument("--limit", type=int, default=40)
    ev.add_argument("--scenes", type=int, default=10)
    ev.add_argument("--sweep-frames", type=int, default=6)
    ev.add_argument("--seed", type=int)
    ev.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare-sampling",
                       help="axis-only vs volume-sampled training comparison")
    c.add_argument("--axis", required=True)
    c.add_argument("--volume", required=True)
    c.add_argument("--out")
    c.add_argument("--steps", type=int, default=3000)
    c.add_argument("--batch-size", type=int, default=8)
    c.add_argument("--lr", type=float, default=2e-4)
    c.add_argument("--scenes", type=int, default=4)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_compare_sampling)

    sv = sub.add_parser("serve", help="run the HTTP edit service")
    sv.add_argument("--model", required=True)
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--queue", type=int, default=8)
    sv.add_argument("--frontend")
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        _log("interrupted")
        return 1
    except Exception as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
