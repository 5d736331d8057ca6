"""Command-line interface: ``lainr <verb> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import data as D
from . import tensor as T
from .config import SYNTHETIC_PREFIX, RunConfig, format_config, load_config
from .diagnostics import concentration, rescale_map, token_ablation_maps
from .encoder import padded_grid, patchify
from .errors import ConfigError, ContractError, FormatError, TrainingDiverged
from .io import load_checkpoint, restore_trainer, save_checkpoint, save_latent_archive
from .model import INRNetwork, predict, render_novel_view
from .training import Trainer, psnr

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CHECKPOINT_NAME = "checkpoint.lainr"
METRICS_NAME = "metrics.log"

log = logging.getLogger("lainr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers
def load_dataset(cfg):
    """Instances described by a run config."""
    if cfg.kind == "image":
        return D.load_image_dir(cfg.dataset)
    if cfg.dataset.startswith(SYNTHETIC_PREFIX):
        shape = cfg.dataset[len(SYNTHETIC_PREFIX):] or cfg.scene.shape
        return [D.load_synthetic_scene(dataclasses.replace(cfg.scene, shape=shape))]
    if os.path.exists(os.path.join(cfg.dataset, "cameras.json")):
        return [D.load_scene_dir(cfg.dataset)]
    if not os.path.isdir(cfg.dataset):
        raise OSError(f"dataset directory {cfg.dataset} does not exist")
    scenes = [os.path.join(cfg.dataset, s) for s in sorted(os.listdir(cfg.dataset))
              if os.path.exists(os.path.join(cfg.dataset, s, "cameras.json"))]
    if not scenes:
        raise OSError(f"no scenes found in {cfg.dataset}")
    return [D.load_scene_dir(s) for s in scenes]


def check_compatible(model, instance):
    """Fail with an explanation when ``instance`` cannot be tokenized for ``model``."""
    p = model.patch_size
    arr = instance.array
    h, w = arr.shape[-3], arr.shape[-2]
    if p > h or p > w:
        raise ContractError(f"patch size {p} exceeds the {h}x{w} input")
    tokens = patchify(arr, p)
    if tokens.shape != (model.encoder.num_data_tokens, model.encoder.patch_dim):
        gh, gw = padded_grid(h, w, p)
        raise ContractError(
            f"input {instance.instance_id or ''} of size {h}x{w} is zero-padded to {gh}x{gw} patches of "
            f"{p}x{p} pixels, giving {tokens.shape[0]} tokens of width {tokens.shape[1]}; the checkpoint "
            f"expects {model.encoder.num_data_tokens} tokens of width {model.encoder.patch_dim}")


def _encode(model, instances):
    with T.no_grad():
        return np.concatenate([model.encode(model.tokens(instances[i:i + 16])).data
                               for i in range(0, len(instances), 16)])


def _image_inputs(paths):
    instances = []
    for path in paths:
        if os.path.isdir(path):
            instances.extend(D.load_image_dir(path))
        else:
            instances.append(D.image_instance(D.read_image(path), instance_id=os.path.basename(path)))
    return instances


# ----------------------------------------------------------------- commands
def cmd_train(args):
    cfg = load_config(args.config)
    dataset = load_dataset(cfg)
    out = cfg.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    ckpt_path = os.path.join(out, CHECKPOINT_NAME)
    if args.resume:
        model, meta, arrays = load_checkpoint(args.resume)
    else:
        model = INRNetwork.for_instance(dataset[0], cfg.encoder, cfg.decoder, seed=cfg.train.seed)
    for inst in dataset:
        check_compatible(model, inst)
    trainer = Trainer(model, dataset, cfg.train)
    if args.resume:
        restore_trainer(trainer, meta, arrays)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(format_config(cfg))
    cfg_dict = cfg.to_dict()
    remaining = max(0, cfg.train.steps - trainer.step)
    trainer.run(remaining, log_path=os.path.join(out, METRICS_NAME),
                on_eval=lambda tr, rec: save_checkpoint(ckpt_path, tr.model, tr, cfg_dict))
    save_checkpoint(ckpt_path, model, trainer, cfg_dict)
    final = trainer.loss_trace[-1] if trainer.loss_trace else float("nan")
    print(f"trained {trainer.step} steps; final loss {final:.9g}; checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_reconstruct(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    instances = _image_inputs(args.images)
    for inst in instances:
        check_compatible(model, inst)
    os.makedirs(args.out, exist_ok=True)
    preds = predict(model, instances)
    scores = []
    for inst, pred in zip(instances, preds):
        image = np.clip(inst.as_image(pred), 0.0, 1.0)
        stem = os.path.splitext(inst.instance_id.replace(os.sep, "_"))[0]
        D.write_image(os.path.join(args.out, f"{stem}_recon.png"), image)
        np.save(os.path.join(args.out, f"{stem}_recon.npy"), image)
        score = psnr(image, inst.array)
        scores.append(score)
        print(f"{inst.instance_id}\t{score:.4f} dB")
    print(f"mean\t{np.mean(scores):.4f} dB")
    return EXIT_OK


def cmd_eval(args):
    model, meta, _ = load_checkpoint(args.checkpoint)
    if os.path.exists(os.path.join(args.dataset, "cameras.json")):
        instances = [D.load_scene_dir(args.dataset)]
    else:
        instances = D.load_image_dir(args.dataset)
    for inst in instances:
        check_compatible(model, inst)
    preds = predict(model, instances)
    scores = [psnr(np.clip(p, 0, 1), inst.targets) for p, inst in zip(preds, instances)]
    print(f"instances {len(scores)}\tmean psnr {np.mean(scores):.4f} dB")
    return EXIT_OK


def cmd_ablate_token(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    inst = _image_inputs([args.image])[0]
    check_compatible(model, inst)
    R = model.encoder_config.R
    if args.token == "all":
        tokens = list(range(R))
    else:
        try:
            tokens = [int(args.token)]
        except ValueError:
            raise UsageError(f"--token must be an integer or 'all', got {args.token!r}") from None
        if not 0 <= tokens[0] < R:
            raise UsageError(f"token index {tokens[0]} out of range 0..{R - 1}")
    maps = token_ablation_maps(model, inst, tokens)
    os.makedirs(args.out, exist_ok=True)
    lines = ["token\tconcentration"]
    for k, diff in zip(tokens, maps):
        D.write_image(os.path.join(args.out, f"token_{k:03d}.png"), rescale_map(diff))
        lines.append(f"{k}\t{concentration(diff):.6f}")
    with open(os.path.join(args.out, "concentration.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_export_latents(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    if os.path.exists(os.path.join(args.dataset, "cameras.json")):
        instances = [D.load_scene_dir(args.dataset)]
    else:
        instances = D.load_image_dir(args.dataset)
    for inst in instances:
        check_compatible(model, inst)
    latents = _encode(model, instances)
    labels = [inst.label for inst in instances]
    save_latent_archive(args.out, latents, [inst.instance_id for inst in instances],
                        labels=labels if any(lab >= 0 for lab in labels) else None)
    print(f"wrote {len(instances)} latent sets of shape {latents.shape[1:]} to {args.out}")
    return EXIT_OK


def _parse_pose(text):
    try:
        pose = np.asarray(json.loads(text), dtype=np.float64)
    except (json.JSONDecodeError, ValueError, TypeError):
        raise UsageError("--target-pose must be a JSON 3x4 matrix") from None
    return pose


def cmd_nvs(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    scene = D.load_scene_dir(args.scene)
    check_compatible(model, scene)
    if args.target_pose is not None:
        pose = _parse_pose(args.target_pose)
    elif args.target_angle is not None:
        spec = D.SceneSpec(**{**vars(D.SceneSpec()), **json.loads(args.ring or "{}")})
        pose = D.ring_pose(spec, args.target_angle)
    else:
        raise UsageError("give --target-pose or --target-angle")
    image = np.clip(render_novel_view(model, scene, pose, args.height, args.width), 0, 1)
    height, width = image.shape[:2]
    D.write_image(args.out, image)
    np.save(os.path.splitext(args.out)[0] + ".npy", image)
    print(f"rendered {height}x{width} view to {args.out}")
    return EXIT_OK


def cmd_make_scene(args):
    spec = D.SceneSpec(shape=args.shape, num_views=args.views, height=args.size, width=args.size)
    scene = D.load_synthetic_scene(spec)
    views = scene.targets.reshape(*scene.grid_shape, 3)
    D.write_scene_dir(args.out, views, scene.extras["poses"], scene.extras["intrinsics"])
    print(f"wrote {spec.num_views} views to {args.out}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="lainr", description="Locality-aware generalizable implicit neural representations")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct images and report PSNR")
    p.add_argument("checkpoint")
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--out", default="reconstructions")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="mean PSNR over an image directory or scene")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-token", help="difference maps from zeroing latent tokens")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--token", default="all", help="token index or 'all'")
    p.add_argument("--out", default="ablation")
    p.set_defaults(func=cmd_ablate_token)

    p = sub.add_parser("export-latents", help="write raw and standardized latents")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out", default="latents.lainr")
    p.set_defaults(func=cmd_export_latents)

    p = sub.add_parser("nvs", help="render a novel view of a scene")
    p.add_argument("checkpoint")
    p.add_argument("scene", help="scene directory with cameras.json")
    p.add_argument("--target-pose", help="JSON 3x4 camera-to-world matrix")
    p.add_argument("--target-angle", type=float, help="angle on the synthetic camera ring, degrees")
    p.add_argument("--ring", help="JSON overrides of the ring geometry for --target-angle")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--out", default="novel_view.png")
    p.set_defaults(func=cmd_nvs)

    p = sub.add_parser("make-scene", help="render a procedural multi-view scene")
    p.add_argument("out")
    p.add_argument("--shape", default="cube", choices=("cube", "sphere"))
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_make_scene)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, ContractError, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
