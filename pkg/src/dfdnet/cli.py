"""Command-line entry point: ``dfd build-dict | degrade | train | restore | eval | synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import TrainingConfig
from .data import load_dataset, load_image, make_pairs, save_image
from .degradation import DegradationParams, apply_degradation, parse_kernel_spec, resize, sample_degradation
from .dictionary import build_dictionary, load_dictionary, save_dictionary
from .errors import DFDError
from .evaluate import evaluate, write_csv
from .features import load_encoder, load_landmarks, save_landmarks, toy_encoder
from .generator import restore

log = logging.getLogger("dfdnet")


def _encoder(args):
    if args.encoder == "toy":
        return toy_encoder(args.encoder_seed, args.resolution)
    return load_encoder(args.encoder)


def cmd_build_dict(args):
    dataset = load_dataset(args.images, args.landmarks)
    dset = build_dictionary(dataset, _encoder(args), k=args.clusters, seed=args.seed)
    save_dictionary(dset, args.out)
    log.info("wrote %d-cluster dictionary from %d images to %s", dset.k, dset.sample_count, args.out)


def cmd_degrade(args):
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in Path(args.inp).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    for p in paths:
        drawn = sample_degradation(rng)
        params = DegradationParams(
            kernel=parse_kernel_spec(args.kernel) if args.kernel else drawn.kernel,
            downsample_factor=args.r if args.r is not None else drawn.downsample_factor,
            noise_sigma=args.sigma if args.sigma is not None else drawn.noise_sigma,
            jpeg_quality=args.q if args.q is not None else drawn.jpeg_quality,
        )
        noise_seed = int(rng.integers(2 ** 31))
        degraded = apply_degradation(load_image(p), params, noise_seed)
        save_image(out / f"{p.stem}.png", degraded)
        (out / f"{p.stem}.params.txt").write_text(
            f"id={p.stem}\nnoise_seed={noise_seed}\n" + params.to_manifest())
    log.info("degraded %d images into %s", len(paths), out)


def cmd_train(args):
    from .train import Trainer

    dictionary = load_dictionary(args.dict) if args.dict else None
    train_set = load_dataset(args.images, args.landmarks)
    if args.resume:
        val_pairs = None
        if args.val_images:
            cfg = TrainingConfig.from_text(_ckpt_config_text(args.resume))
            val_pairs = make_pairs(load_dataset(args.val_images, args.val_landmarks), cfg.task, cfg.data_seed + 1)
        trainer = Trainer.resume(args.resume, dictionary, train_set, val_pairs, out_dir=args.out)
    else:
        cfg = TrainingConfig.load(args.config)
        val_pairs = None
        if args.val_images:
            val_pairs = make_pairs(load_dataset(args.val_images, args.val_landmarks), cfg.task, cfg.data_seed + 1)
        trainer = Trainer(cfg, dictionary, train_set, val_pairs, out_dir=args.out)
    trainer.run(args.steps)


def _ckpt_config_text(path):
    from .train import read_checkpoint
    return read_checkpoint(path)["config_text"]


def cmd_restore(args):
    from .train import load_generator

    gen, cfg = load_generator(args.ckpt)
    dictionary = load_dictionary(args.dict) if gen.dft_scales else None
    image = load_image(args.inp)
    landmarks = load_landmarks(args.landmarks)
    res = cfg.resolution
    if image.shape[:2] != (res, res):
        sy, sx = res / image.shape[0], res / image.shape[1]
        landmarks = landmarks * np.array([sx, sy])
        image = np.clip(resize(image, (res, res)), 0, 1)
    out = restore(image, landmarks, dictionary, gen)
    save_image(args.out, out.image[0].permute(1, 2, 0).double().numpy())
    if args.diag:
        with open(args.diag, "w") as fh:
            for d in out.diagnostics:
                fh.write(json.dumps({"scale": d.scale, "component": d.component, "k_star": d.k_star,
                                     "mean_confidence": round(d.mean_confidence, 6)}) + "\n")


def cmd_eval(args):
    from .train import load_generator

    gen, cfg = load_generator(args.ckpt)
    dictionary = load_dictionary(args.dict) if gen.dft_scales else None
    pairs = make_pairs(load_dataset(args.images, args.landmarks), args.task or cfg.task, args.seed)
    records, summary = evaluate(gen, dictionary, pairs)
    write_csv(records, args.out)
    print(json.dumps(summary))


def cmd_synth(args):
    from .synthetic import synthetic_faces

    img_dir, lm_dir = Path(args.out) / "images", Path(args.out) / "landmarks"
    img_dir.mkdir(parents=True, exist_ok=True)
    lm_dir.mkdir(parents=True, exist_ok=True)
    for image_id, image, lm in synthetic_faces(args.n, args.seed, args.resolution):
        save_image(img_dir / f"{image_id}.png", image)
        save_landmarks(lm_dir / f"{image_id}.txt", lm)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def encoder_opts(sp):
        sp.add_argument("--encoder", default="toy", help="'toy' or a saved encoder checkpoint")
        sp.add_argument("--encoder-seed", type=int, default=0)
        sp.add_argument("--resolution", type=int, default=256)

    sp = sub.add_parser("build-dict", help="cluster component features into dictionaries")
    sp.add_argument("--images", required=True)
    sp.add_argument("--landmarks", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--clusters", type=int, default=256)
    sp.add_argument("--seed", type=int, default=0)
    encoder_opts(sp)
    sp.set_defaults(func=cmd_build_dict)

    sp = sub.add_parser("degrade", help="synthesize degraded images")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--r", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--q", type=int)
    sp.add_argument("--kernel", help="gaussian:SIGMA or motion:IDX")
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("train", help="train the restoration network")
    sp.add_argument("--config")
    sp.add_argument("--dict")
    sp.add_argument("--images", required=True)
    sp.add_argument("--landmarks", required=True)
    sp.add_argument("--val-images")
    sp.add_argument("--val-landmarks")
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--resume")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("restore", help="restore one image")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--landmarks", required=True)
    sp.add_argument("--dict", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--diag")
    sp.set_defaults(func=cmd_restore)

    sp = sub.add_parser("eval", help="PSNR/SSIM against bicubic on synthesized pairs")
    sp.add_argument("--images", required=True)
    sp.add_argument("--landmarks", required=True)
    sp.add_argument("--dict", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--task", choices=("x4", "x8", "blind"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="write procedural toy faces with landmarks")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--resolution", type=int, default=64)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "train" and not (args.config or args.resume):
        print("dfd train: one of --config or --resume is required", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except DFDError as exc:
        print(f"dfd {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
