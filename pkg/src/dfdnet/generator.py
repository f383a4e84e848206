"""The restoration network: frozen encoder, DFT blocks, SFT-modulated decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dft import DFTBlock
from .errors import ConfigurationError, ShapeError
from .features import SCALES, Encoder, RoiBox, component_rois, extract_features

SUPPORTED_RESOLUTIONS = (32, 64, 128, 256)
DFT_SCALES = {0: (), 2: (3, 4), 4: (1, 2, 3, 4)}


@dataclass
class GeneratorConfig:
    resolution: int = 256
    dft_blocks: int = 4
    use_cadain: bool = True
    use_confidence: bool = True
    match_mode: str = "inner"
    seed: int = 0

    def validate(self) -> None:
        if self.resolution not in SUPPORTED_RESOLUTIONS:
            raise ConfigurationError(f"unsupported resolution {self.resolution}; choose from {SUPPORTED_RESOLUTIONS}")
        if self.dft_blocks not in DFT_SCALES:
            raise ConfigurationError(f"dft_blocks must be 0, 2 or 4, got {self.dft_blocks}")
        if self.match_mode not in ("inner", "cosine"):
            raise ConfigurationError(f"match_mode must be inner or cosine, got {self.match_mode!r}")


class SFT(nn.Module):
    """``alpha * x + beta`` with alpha, beta predicted from a condition map.

    Each branch is two 3x3 convolutions; the last layers start near zero
    weight with biases 1 (alpha) and 0 (beta), so the layer starts close to
    identity.
    """

    def __init__(self, channels: int, cond_channels: int):
        super().__init__()
        self.scale = nn.Sequential(nn.Conv2d(cond_channels, channels, 3, padding=1), nn.LeakyReLU(0.2),
                                   nn.Conv2d(channels, channels, 3, padding=1))
        self.shift = nn.Sequential(nn.Conv2d(cond_channels, channels, 3, padding=1), nn.LeakyReLU(0.2),
                                   nn.Conv2d(channels, channels, 3, padding=1))
        for branch, bias in ((self.scale, 1.0), (self.shift, 0.0)):
            nn.init.normal_(branch[2].weight, std=1e-3)
            nn.init.constant_(branch[2].bias, bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != cond.shape[-2:]:
            raise ShapeError(f"SFT condition {tuple(cond.shape[-2:])} does not match feature {tuple(x.shape[-2:])}")
        return self.scale(cond) * x + self.shift(cond)


@dataclass
class RestorationOutput:
    image: torch.Tensor                      # B x 3 x H x W in [0, 1]
    diagnostics: list = field(default_factory=list)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig, encoder: Encoder):
        super().__init__()
        config.validate()
        if encoder.config.resolution != config.resolution:
            raise ConfigurationError(
                f"encoder resolution {encoder.config.resolution} != generator resolution {config.resolution}")
        self.config = config
        # held outside the module tree so it never reaches optimizers or grads
        self.__dict__["encoder"] = encoder
        ch = encoder.channels
        self.dft_scales = DFT_SCALES[config.dft_blocks]
        self.dft = nn.ModuleDict({
            str(s): DFTBlock(s, ch[s - 1], config.resolution, config.use_cadain,
                             config.use_confidence, config.match_mode)
            for s in self.dft_scales
        })
        self.bottleneck = nn.Conv2d(ch[3], ch[3], 3, padding=1)
        self.up_convs = nn.ModuleDict({str(s): nn.Conv2d(ch[s], ch[s - 1], 3, padding=1) for s in (1, 2, 3)})
        self.post_convs = nn.ModuleDict({str(s): nn.Conv2d(ch[s - 1], ch[s - 1], 3, padding=1) for s in SCALES})
        self.sft = nn.ModuleDict({str(s): SFT(ch[s - 1], ch[s - 1]) for s in SCALES})
        self.head = nn.Conv2d(ch[0], 3, 3, padding=1)
        self._init_weights()

    def _init_weights(self):
        gen = torch.Generator().manual_seed(self.config.seed)
        for name, m in self.named_modules():
            if isinstance(m, nn.Conv2d) and not (name.startswith("sft") and name.endswith(".2")):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu", generator=gen)
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.head.weight, std=1e-2, generator=gen)
        for sft in self.sft.values():
            for branch, bias in ((sft.scale, 1.0), (sft.shift, 0.0)):
                nn.init.normal_(branch[2].weight, std=1e-3, generator=gen)
                nn.init.constant_(branch[2].bias, bias)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def boxes_for(self, landmarks) -> list[list[RoiBox]]:
        res = self.config.resolution
        return [component_rois(np.asarray(lm), (res, res)) for lm in landmarks]

    def forward(self, degraded: torch.Tensor, landmarks, dictionary=None,
                diagnostics: list | None = None) -> torch.Tensor:
        """Restore a batch ``B x 3 x H x W`` already resampled to the network size.

        ``landmarks`` is a sequence of B ``68 x 2`` arrays in network pixel
        coordinates. ``dictionary`` may be ``None`` only with no DFT blocks.
        """
        if self.dft_scales:
            if dictionary is None:
                raise ConfigurationError("this generator has DFT blocks and needs a dictionary")
            if dictionary.encoder_hash != self.encoder_hash:
                raise ConfigurationError(
                    "dictionary was built with a different encoder "
                    f"({dictionary.encoder_hash[:12]} vs {self.encoder_hash[:12]})")
        with torch.no_grad():
            feats = extract_features(degraded, self.encoder)
        boxes = self.boxes_for(landmarks) if self.dft_scales else None

        restored = {}
        for s in reversed(SCALES):   # coarse to fine
            fm = feats[s - 1]
            if s in self.dft_scales:
                diag = [] if diagnostics is not None else None
                fm = self.dft[str(s)](fm, boxes, dictionary, diag)
                if diagnostics is not None:
                    diagnostics.append((s, diag))
            restored[s] = fm

        x = F.leaky_relu(self.bottleneck(restored[4]), 0.2)
        for s in reversed(SCALES):
            if s < 4:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
                x = F.leaky_relu(self.up_convs[str(s)](x), 0.2)
            x = self.sft[str(s)](x, restored[s])
            x = F.leaky_relu(self.post_convs[str(s)](x), 0.2)
        return (torch.tanh(self.head(x)) + 1.0) / 2.0

    @property
    def encoder_hash(self) -> str:
        if not hasattr(self, "_encoder_hash"):
            self.__dict__["_encoder_hash"] = self.encoder.content_hash()
        return self._encoder_hash


def build_generator(config: GeneratorConfig, encoder: Encoder) -> Generator:
    gen = Generator(config, encoder)
    return gen.to(next(encoder.parameters()).dtype)


def restore(degraded, landmarks, dictionary, generator: Generator) -> RestorationOutput:
    """Run ``generator`` on one image (``H x W x 3`` array at network size)."""
    res = generator.config.resolution
    x = torch.as_tensor(np.ascontiguousarray(degraded)).permute(2, 0, 1)[None]
    if tuple(x.shape[-2:]) != (res, res):
        raise ShapeError(f"input must be resampled to {res} x {res}, got {tuple(x.shape[-2:])}")
    x = x.to(next(generator.encoder.parameters()).dtype)
    diags: list = []
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            out = generator(x, [landmarks], dictionary, diags)
    finally:
        generator.train(was_training)
    flat = [d for _, per_sample in diags for d in per_sample[0]]
    return RestorationOutput(out, flat)
