"""Alternating discriminator/generator training with plateau lr halving."""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path

import numpy as np
import torch

from .config import TrainingConfig
from .data import degrade_for_task
from .errors import ConfigurationError, DFDError
from .features import Encoder, EncoderConfig, load_encoder, toy_encoder
from .generator import Generator, build_generator
from .losses import DiscriminatorBank, discriminator_loss, generator_adv_loss, reconstruction_loss, total_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dfdnet-ckpt-1"
LOG_HEADER = "step,loss_rec,loss_adv_g,loss_d,lr"


class TrainingDiverged(DFDError):
    pass


def make_encoder(config: TrainingConfig) -> Encoder:
    if config.encoder == "toy":
        return toy_encoder(config.encoder_seed, config.resolution)
    enc = load_encoder(config.encoder)
    if enc.config.resolution != config.resolution:
        raise ConfigurationError(
            f"encoder {config.encoder} is configured for {enc.config.resolution}, not {config.resolution}")
    return enc


class PlateauHalver:
    """Halve the learning rate after ``patience`` validations without a new best."""

    def __init__(self, lr: float, patience: int):
        self.lr = lr
        self.patience = patience
        self.best = math.inf
        self.bad = 0

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr /= 2.0
                self.bad = 0
        return self.lr

    def state_dict(self) -> dict:
        return {"lr": self.lr, "patience": self.patience, "best": self.best, "bad": self.bad}

    def load_state_dict(self, state: dict) -> None:
        self.lr, self.patience, self.best, self.bad = state["lr"], state["patience"], state["best"], state["bad"]


def _batch_tensors(items, dtype=torch.float32):
    return torch.from_numpy(np.stack(items)).permute(0, 3, 1, 2).to(dtype).contiguous()


class Trainer:
    """Owns generator, discriminators, optimizers and all training randomness.

    ``train_set`` holds HQ ``(image_id, image, landmarks)`` samples; each
    step draws a batch and degrades it afresh for the configured task.
    """

    def __init__(self, config: TrainingConfig, dictionary, train_set, val_pairs=None,
                 encoder: Encoder | None = None, out_dir=None):
        self.config = config
        self.dictionary = dictionary
        self.train_set = [s for s in train_set if s[2] is not None]
        if not self.train_set:
            raise ConfigurationError("training set has no images with landmarks")
        self.val_pairs = list(val_pairs or [])
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.encoder = encoder if encoder is not None else make_encoder(config)

        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.generator = build_generator(config.generator_config(), self.encoder)
            self.bank = (DiscriminatorBank(config.resolution, base_channels=config.disc_channels)
                         if config.use_adversarial else None)
        if config.dft_blocks and (dictionary is None or dictionary.encoder_hash != self.generator.encoder_hash):
            raise ConfigurationError("dictionary missing or built with a different encoder")

        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(self.generator.trainable_parameters(), lr=config.lr, betas=betas)
        self.opt_d = torch.optim.Adam(self.bank.parameters(), lr=config.lr, betas=betas) if self.bank else None
        self.weights = config.loss_weights()
        self.plateau = PlateauHalver(config.lr, config.lr_patience)
        self.rng = np.random.default_rng(config.data_seed)
        self.step = 0
        self.history: list[dict] = []

    # -- data ------------------------------------------------------------------

    def next_batch(self):
        n = len(self.train_set)
        idx = self.rng.choice(n, size=min(self.config.batch_size, n), replace=False)
        degraded, hq, lms = [], [], []
        for i in idx:
            _, image, landmarks = self.train_set[i]
            _, _, _, up = degrade_for_task(image, self.config.task, self.rng)
            degraded.append(up)
            hq.append(image)
            lms.append(landmarks)
        return _batch_tensors(degraded), _batch_tensors(hq), lms

    # -- steps -----------------------------------------------------------------

    @property
    def lr(self) -> float:
        return self.opt_g.param_groups[0]["lr"]

    def _set_lr(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_d):
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr

    def train_step(self) -> dict:
        x, y, lms = self.next_batch()
        self.generator.train()
        fake = self.generator(x, lms, self.dictionary)

        loss_d = torch.zeros(())
        if self.bank is not None:
            self.bank.train()
            self.bank.requires_grad_(True)
            self.opt_d.zero_grad(set_to_none=True)
            loss_d = discriminator_loss(self.bank, y, fake)
            if not torch.isfinite(loss_d):
                raise TrainingDiverged(f"discriminator loss is {float(loss_d.detach())} at step {self.step + 1}")
            loss_d.backward()
            self.opt_d.step()
            self.bank.requires_grad_(False)

        rec, _ = reconstruction_loss(fake, y, self.encoder, self.weights)
        adv = generator_adv_loss(self.bank, fake, self.weights) if self.bank is not None else torch.zeros(())
        loss = total_loss(rec, adv)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"generator loss is {float(loss.detach())} at step {self.step + 1}")
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        self.step += 1
        rec_row = {"step": self.step, "loss_rec": float(rec.detach()), "loss_adv_g": float(adv.detach()),
                   "loss_d": float(loss_d.detach()), "lr": self.lr}
        self.history.append(rec_row)
        return rec_row

    def validate(self, batch_size: int = 16) -> float:
        if not self.val_pairs:
            return math.nan
        was_training = self.generator.training
        self.generator.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for i in range(0, len(self.val_pairs), batch_size):
                chunk = self.val_pairs[i:i + batch_size]
                x = _batch_tensors([p.upsampled for p in chunk])
                y = _batch_tensors([p.hq for p in chunk])
                out = self.generator(x, [p.landmarks for p in chunk], self.dictionary)
                rec, _ = reconstruction_loss(out, y, self.encoder, self.weights)
                total += float(rec) * len(chunk)
                count += len(chunk)
        self.generator.train(was_training)
        return total / count

    def run(self, max_steps: int | None = None) -> list[dict]:
        """Train until ``max_steps`` (default: the config's) total steps."""
        cfg = self.config
        max_steps = cfg.max_steps if max_steps is None else max_steps
        log_fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            cfg.save(self.out_dir / "config.txt")
            log_path = self.out_dir / "train_log.csv"
            fresh = not log_path.exists() or self.step == 0
            log_fh = open(log_path, "w" if fresh else "a")
            if fresh:
                log_fh.write(LOG_HEADER + "\n")
        try:
            while self.step < max_steps:
                try:
                    row = self.train_step()
                except TrainingDiverged:
                    log.error("training diverged; last good checkpoint: %s", self.last_checkpoint())
                    raise
                if log_fh is not None:
                    log_fh.write(f"{row['step']},{row['loss_rec']:.6g},{row['loss_adv_g']:.6g},"
                                 f"{row['loss_d']:.6g},{row['lr']:.6g}\n")
                if row["step"] % cfg.log_every == 0:
                    log.info("step %d rec %.4g adv %.4g d %.4g lr %.3g", row["step"], row["loss_rec"],
                             row["loss_adv_g"], row["loss_d"], row["lr"])
                if self.val_pairs and self.step % cfg.val_every == 0:
                    val = self.validate()
                    new_lr = self.plateau.update(val)
                    if new_lr != self.lr:
                        log.info("validation loss plateaued; lr -> %g", new_lr)
                        self._set_lr(new_lr)
                    log.info("step %d validation rec %.4g", self.step, val)
                if self.out_dir is not None and self.step % cfg.ckpt_every == 0:
                    self.save_checkpoint(self.out_dir / "checkpoint.pt")
        finally:
            if log_fh is not None:
                log_fh.close()
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "checkpoint.pt")
        return self.history

    # -- checkpoints -------------------------------------------------------------

    def last_checkpoint(self):
        if self.out_dir is None:
            return None
        p = self.out_dir / "checkpoint.pt"
        return p if p.exists() else None

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config_text": self.config.to_text(),
            "step": self.step,
            "generator": self.generator.state_dict(),
            "bank": self.bank.state_dict() if self.bank is not None else None,
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict() if self.opt_d is not None else None,
            "plateau": self.plateau.state_dict(),
            "rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "encoder": {"config": dict(self.encoder.config.__dict__), "state": self.encoder.state_dict()},
            "encoder_hash": self.generator.encoder_hash,
        }

    def save_checkpoint(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        torch.save(self.state(), tmp)
        os.replace(tmp, path)

    def load_state(self, blob: dict) -> None:
        self.step = blob["step"]
        self.generator.load_state_dict(blob["generator"])
        if self.bank is not None:
            self.bank.load_state_dict(blob["bank"])
            self.opt_d.load_state_dict(blob["opt_d"])
        self.opt_g.load_state_dict(blob["opt_g"])
        self.plateau.load_state_dict(blob["plateau"])
        self.rng.bit_generator.state = blob["rng"]
        torch.set_rng_state(blob["torch_rng"])

    @classmethod
    def resume(cls, path, dictionary, train_set, val_pairs=None, out_dir=None) -> "Trainer":
        blob = read_checkpoint(path)
        config = TrainingConfig.from_text(blob["config_text"])
        trainer = cls(config, dictionary, train_set, val_pairs, encoder=_encoder_from_blob(blob), out_dir=out_dir)
        trainer.load_state(blob)
        return trainer


def read_checkpoint(path) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    return blob


def _encoder_from_blob(blob) -> Encoder:
    cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in blob["encoder"]["config"].items()}
    enc = Encoder(EncoderConfig(**cfg))
    enc.load_state_dict(blob["encoder"]["state"])
    enc.freeze()
    if enc.content_hash() != blob["encoder_hash"]:
        raise ConfigurationError("checkpoint encoder weights do not match their recorded hash")
    return enc


def load_generator(path) -> tuple[Generator, TrainingConfig]:
    """Rebuild the trained generator (with its frozen encoder) from a checkpoint."""
    blob = read_checkpoint(path)
    config = TrainingConfig.from_text(blob["config_text"])
    gen = build_generator(config.generator_config(), _encoder_from_blob(blob))
    gen.load_state_dict(blob["generator"])
    return gen.eval(), config
