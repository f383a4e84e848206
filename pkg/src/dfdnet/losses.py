"""Reconstruction, multi-scale hinge adversarial losses and spectral norm."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

DISCRIMINATOR_SCALES = (1, 2, 4, 8)


@dataclass
class LossWeights:
    l2: float = 100.0
    perceptual: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    adversarial: dict[int, float] = field(default_factory=lambda: {1: 4.0, 2: 2.0, 4: 1.0, 8: 1.0})
    pixel_reduction: str = "mean"

    def __post_init__(self):
        vals = [self.l2, *self.perceptual, *self.adversarial.values()]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if self.pixel_reduction not in ("mean", "sum"):
            raise ValueError(f"pixel_reduction must be mean or sum, got {self.pixel_reduction!r}")


def reconstruction_loss(restored: torch.Tensor, target: torch.Tensor, extractor,
                        weights: LossWeights) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted pixel MSE plus per-layer normalized feature MSE.

    The pixel term is a mean over all elements (``pixel_reduction="mean"``)
    or a per-image squared norm averaged over the batch (``"sum"``). Feature
    terms use each layer's ``C*H*W`` normalization, averaged over the batch.
    """
    if restored.shape != target.shape:
        raise ShapeError(f"restored {tuple(restored.shape)} vs target {tuple(target.shape)}")
    diff = restored - target
    if weights.pixel_reduction == "mean":
        pixel = diff.pow(2).mean()
    else:
        pixel = diff.pow(2).flatten(1).sum(1).mean()
    loss = weights.l2 * pixel
    parts = {"pixel": float(pixel.detach())}
    if extractor is not None and any(weights.perceptual):
        feats_r = extractor(restored)
        with torch.no_grad():
            feats_t = extractor(target)
        for m, (fr, ft, lam) in enumerate(zip(feats_r, feats_t, weights.perceptual), start=1):
            if lam == 0:
                continue
            term = (fr - ft).pow(2).flatten(1).mean(1).mean()
            loss = loss + lam * term
            parts[f"perceptual_{m}"] = float(term.detach())
    return loss, parts


# -- spectral normalization --------------------------------------------------


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor, n_iter: int = 1,
                       eps: float = 1e-12) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    ``weight`` is viewed as ``out x rest``. Returns the normalized weight,
    the updated left vector ``u`` and the estimate ``sigma = u^T W v``.
    Gradients flow through ``weight`` but not through the iteration.
    """
    w = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        for _ in range(n_iter):
            v = F.normalize(w.t() @ u, dim=0, eps=eps)
            u = F.normalize(w @ v, dim=0, eps=eps)
        v = F.normalize(w.t() @ u, dim=0, eps=eps)
    sigma = u @ (w @ v)
    return weight / sigma.clamp_min(eps), u, sigma


class SNConv2d(nn.Conv2d):
    """Conv2d whose weight is spectrally normalized on every forward.

    One power iteration runs per training-mode forward; eval mode reuses
    the stored vector.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        u = torch.randn(self.out_channels)
        self.register_buffer("sn_u", u / u.norm())

    def normalized_weight(self) -> torch.Tensor:
        if self.training:
            w, u, _ = spectral_normalize(self.weight, self.sn_u, n_iter=1)
            with torch.no_grad():
                self.sn_u.copy_(u)
            return w
        w, _, _ = spectral_normalize(self.weight, self.sn_u, n_iter=0)
        return w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._conv_forward(x, self.normalized_weight(), self.bias)


class Discriminator(nn.Module):
    """Patch classifier: four SN conv blocks, then a 1-channel SN conv.

    Blocks stride by 2 while the map is at least 8 pixels; the per-image
    score is the mean of the patch map.
    """

    def __init__(self, in_size: int, base_channels: int = 32):
        super().__init__()
        layers = []
        c_in, size = 3, in_size
        for i in range(4):
            c_out = base_channels * 2 ** min(i, 3)
            stride = 2 if size >= 8 else 1
            layers += [SNConv2d(c_in, c_out, 4 if stride == 2 else 3, stride=stride, padding=1),
                       nn.LeakyReLU(0.2)]
            size = size // 2 if stride == 2 else size
            c_in = c_out
        layers.append(SNConv2d(c_in, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).flatten(1).mean(1)


def downsample(x: torch.Tensor, r: int) -> torch.Tensor:
    if r == 1:
        return x
    h, w = x.shape[-2:]
    return F.interpolate(x, size=(h // r, w // r), mode="bicubic", align_corners=False, antialias=True)


class DiscriminatorBank(nn.Module):
    def __init__(self, resolution: int, scales=DISCRIMINATOR_SCALES, base_channels: int = 32):
        super().__init__()
        self.scales = tuple(scales)
        self.nets = nn.ModuleDict({str(r): Discriminator(resolution // r, base_channels) for r in self.scales})

    def items(self):
        return [(r, self.nets[str(r)]) for r in self.scales]


def _bank_items(bank):
    return bank.items() if hasattr(bank, "items") else enumerate(bank)


def discriminator_loss(bank, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Hinge loss summed over scales, in minimization form.

    ``bank`` maps each downsampling factor r to a callable returning one
    score per image.
    """
    fake = fake.detach()
    loss = real.new_zeros(())
    for r, d in _bank_items(bank):
        loss = loss + F.relu(1.0 - d(downsample(real, r))).mean() + F.relu(1.0 + d(downsample(fake, r))).mean()
    return loss


def generator_adv_loss(bank, fake: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    loss = fake.new_zeros(())
    for r, d in _bank_items(bank):
        lam = weights.adversarial.get(r, 0.0)
        if lam:
            loss = loss - lam * d(downsample(fake, r)).mean()
    return loss


def total_loss(rec: torch.Tensor, adv_g: torch.Tensor) -> torch.Tensor:
    return rec + adv_g
