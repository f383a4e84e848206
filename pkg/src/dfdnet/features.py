"""Frozen multi-scale encoder, facial component boxes and RoI resampling.

Coordinates are continuous: an image of width ``W`` spans ``[0, W]`` and
pixel ``i`` covers ``[i, i + 1)``. A box at scale ``s`` lives in feature
coordinates, i.e. pixel coordinates divided by the stride ``2 ** (s - 1)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import DegenerateROIError, ParameterError, ShapeError

COMPONENTS = ("left_eye", "right_eye", "nose", "mouth")
SCALES = (1, 2, 3, 4)

# scale-1 crop sizes for a 256 x 256 face
BASE_COMPONENT_SIZE = {"left_eye": 40, "right_eye": 40, "nose": 25, "mouth": 55}
BASE_RESOLUTION = 256

# 0-based landmark index ranges of the 68-point convention, and box margins
_LANDMARK_GROUPS = {
    "left_eye": (range(36, 42), 1.4),
    "right_eye": (range(42, 48), 1.4),
    "nose": (range(27, 36), 1.3),
    "mouth": (range(48, 68), 1.2),
}


def component_size(component: str, scale: int, resolution: int = BASE_RESOLUTION) -> int:
    """Side length of the square crop for ``component`` at ``scale``.

    Sizes are rescaled linearly from the 256-pixel layout, then halved with
    ceiling rounding once per scale.
    """
    if component not in BASE_COMPONENT_SIZE:
        raise ParameterError(f"unknown component {component!r}")
    if scale not in SCALES:
        raise ParameterError(f"scale must be one of {SCALES}, got {scale}")
    size = math.ceil(BASE_COMPONENT_SIZE[component] * resolution / BASE_RESOLUTION)
    for _ in range(scale - 1):
        size = math.ceil(size / 2)
    return size


# -- encoder -----------------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    channels: tuple[int, ...] = (64, 128, 256, 512)
    convs_per_stage: tuple[int, ...] = (2, 2, 3, 3)
    activation: str = "relu"
    input_mean: float = 0.5
    input_scale: float = 2.0
    resolution: int = 256

    def describe(self) -> str:
        return (f"vgg-style channels={','.join(map(str, self.channels))} "
                f"convs={','.join(map(str, self.convs_per_stage))} act={self.activation} "
                f"resolution={self.resolution}")


TOY_ENCODER = EncoderConfig(channels=(16, 32, 64, 128), convs_per_stage=(1, 1, 1, 1),
                            activation="lrelu")


class Encoder(nn.Module):
    """VGG-style stack whose four stage outputs are the feature scales.

    Stage ``s`` runs at stride ``2 ** (s - 1)``; max-pooling sits between
    stages. Parameters never require gradients.
    """

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        super().__init__()
        if len(config.channels) != 4 or len(config.convs_per_stage) != 4:
            raise ParameterError("encoder needs exactly four stages")
        self.config = config
        act = (lambda: nn.ReLU()) if config.activation == "relu" else (lambda: nn.LeakyReLU(0.2))
        stages = []
        c_in = 3
        for s, (c, n) in enumerate(zip(config.channels, config.convs_per_stage)):
            layers = [nn.MaxPool2d(2)] if s > 0 else []
            for _ in range(n):
                layers += [nn.Conv2d(c_in, c, 3, padding=1), act()]
                c_in = c
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        self.freeze()

    def freeze(self) -> "Encoder":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def train(self, mode: bool = True):
        # frozen: never switch to training behaviour
        return super().train(False)

    @property
    def channels(self) -> tuple[int, ...]:
        return self.config.channels

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.config.input_mean) * self.config.input_scale
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def content_hash(self) -> str:
        h = hashlib.sha256(self.config.describe().encode())
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
        return h.hexdigest()


def toy_encoder(seed: int = 0, resolution: int = 64, dtype=torch.float32) -> Encoder:
    """Randomly initialized, then frozen, small encoder for tests and desk runs."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        enc = Encoder(EncoderConfig(**{**TOY_ENCODER.__dict__, "resolution": resolution}))
        for m in enc.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                nn.init.uniform_(m.bias, -0.05, 0.05)
    finally:
        torch.random.set_rng_state(gen_state)
    return enc.to(dtype)


def save_encoder(encoder: Encoder, path) -> None:
    torch.save({"config": encoder.config.__dict__, "state": encoder.state_dict()}, path)


def load_encoder(path) -> Encoder:
    """Load frozen encoder weights written by :func:`save_encoder`."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in blob["config"].items()}
    enc = Encoder(EncoderConfig(**cfg))
    enc.load_state_dict(blob["state"])
    return enc.freeze()


def extract_features(image, encoder: Encoder) -> list[torch.Tensor]:
    """Four feature maps of ``image`` (``H x W x 3`` array or ``B x 3 x H x W`` tensor)."""
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError(f"expected an H x W x 3 image, got {image.shape}")
        image = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None]
    dtype = next(encoder.parameters()).dtype
    image = image.to(dtype)
    res = encoder.config.resolution
    if image.ndim != 4 or image.shape[1] != 3 or tuple(image.shape[-2:]) != (res, res):
        raise ShapeError(f"encoder expects N x 3 x {res} x {res} input, got {tuple(image.shape)}")
    return encoder(image)


# -- component boxes ---------------------------------------------------------


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned box in pixel coordinates, already clamped to the image."""

    component: str
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2

    def at_scale(self, scale: int) -> tuple[float, float, float, float]:
        stride = 2 ** (scale - 1)
        return (self.x0 / stride, self.y0 / stride, self.x1 / stride, self.y1 / stride)

    def translated(self, dx: float, dy: float) -> "RoiBox":
        return RoiBox(self.component, self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


def load_landmarks(path) -> np.ndarray:
    pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if pts.shape != (68, 2):
        raise ShapeError(f"{path}: expected 68 'x y' lines, got array of shape {pts.shape}")
    return pts


def save_landmarks(path, landmarks: np.ndarray) -> None:
    np.savetxt(path, np.asarray(landmarks, dtype=np.float64), fmt="%.4f")


def component_rois(landmarks: np.ndarray, image_size: tuple[int, int]) -> list[RoiBox]:
    """Boxes for the four components in fixed order.

    Each box is a square centred on the mean of the component's landmarks,
    with half-extent ``margin * max distance`` of those landmarks from it.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.shape != (68, 2):
        raise ShapeError(f"expected 68 x 2 landmarks, got {landmarks.shape}")
    h, w = image_size
    boxes = []
    for comp in COMPONENTS:
        idx, margin = _LANDMARK_GROUPS[comp]
        pts = landmarks[list(idx)]
        c = pts.mean(0)
        radius = margin * np.sqrt(((pts - c) ** 2).sum(1)).max()
        x0, x1 = max(0.0, c[0] - radius), min(float(w), c[0] + radius)
        y0, y1 = max(0.0, c[1] - radius), min(float(h), c[1] + radius)
        if not (x1 > x0 and y1 > y0):
            raise DegenerateROIError(f"{comp} box collapses to zero area after clamping")
        boxes.append(RoiBox(comp, float(x0), float(y0), float(x1), float(y1)))
    return boxes


# -- RoIAlign ----------------------------------------------------------------


def _bilinear_rows(pos: np.ndarray, n_in: int) -> np.ndarray:
    """Bilinear weight rows for fractional element positions (clamped to the axis)."""
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((len(pos), n_in))
    rows = np.arange(len(pos))
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _bin_centres(start: float, length: float, n_out: int) -> np.ndarray:
    # continuous coordinate -> element index: subtract half an element
    return start + (np.arange(n_out) + 0.5) * (length / n_out) - 0.5


def roi_align_batch(fm: torch.Tensor, boxes, out_size: tuple[int, int]) -> torch.Tensor:
    """Batched :func:`roi_align`: ``fm`` is ``B x C x H x W``, one box per sample."""
    B, _, H, W = fm.shape
    h, w = out_size
    ay, ax = np.empty((B, h, H)), np.empty((B, w, W))
    for b, (x0, y0, x1, y1) in enumerate(boxes):
        if not (x1 > x0 and y1 > y0):
            raise DegenerateROIError(f"empty box {(x0, y0, x1, y1)}")
        ay[b] = _bilinear_rows(_bin_centres(y0, y1 - y0, h), H)
        ax[b] = _bilinear_rows(_bin_centres(x0, x1 - x0, w), W)
    ay = torch.from_numpy(ay).to(fm.dtype)[:, None]
    ax = torch.from_numpy(ax).to(fm.dtype).transpose(1, 2)[:, None]
    return ay @ fm @ ax


def roi_align(fm: torch.Tensor, box: tuple[float, float, float, float], out_size: tuple[int, int]) -> torch.Tensor:
    """Crop ``fm`` (``C x H x W``) over a feature-space box to ``out_size``.

    One bilinear sample per output bin, at the bin centre; samples are
    clamped to the map. Linear in ``fm`` and channel-independent.
    """
    return roi_align_batch(fm[None], [box], out_size)[0]


def box_cells(box: tuple[float, float, float, float], shape: tuple[int, int]) -> tuple[slice, slice]:
    """Feature elements whose centres fall inside ``box``."""
    x0, y0, x1, y1 = box
    H, W = shape
    r0, r1 = max(0, math.ceil(y0 - 0.5)), min(H - 1, math.floor(y1 - 0.5))
    c0, c1 = max(0, math.ceil(x0 - 0.5)), min(W - 1, math.floor(x1 - 0.5))
    return slice(r0, max(r0, r1 + 1)), slice(c0, max(c0, c1 + 1))


def reverse_roi_align_batch(fm: torch.Tensor, comp: torch.Tensor, boxes) -> torch.Tensor:
    """Batched :func:`reverse_roi_align`."""
    if comp.shape[:2] != fm.shape[:2]:
        raise ShapeError(f"component {tuple(comp.shape[:2])} does not match map {tuple(fm.shape[:2])} in B, C")
    B, _, H, W = fm.shape
    h, w = comp.shape[-2:]
    py, px = np.zeros((B, H, h)), np.zeros((B, W, w))
    mask = np.zeros((B, 1, H, W), dtype=bool)
    for b, (x0, y0, x1, y1) in enumerate(boxes):
        rows, cols = box_cells((x0, y0, x1, y1), (H, W))
        if rows.stop <= rows.start or cols.stop <= cols.start:
            continue
        r = np.arange(rows.start, rows.stop)
        c = np.arange(cols.start, cols.stop)
        # element centre -> fractional index into the component grid
        py[b, rows] = _bilinear_rows((r + 0.5 - y0) / ((y1 - y0) / h) - 0.5, h)
        px[b, cols] = _bilinear_rows((c + 0.5 - x0) / ((x1 - x0) / w) - 0.5, w)
        mask[b, 0, rows, cols] = True
    py = torch.from_numpy(py).to(fm.dtype)[:, None]
    px = torch.from_numpy(px).to(fm.dtype).transpose(1, 2)[:, None]
    patch = py @ comp @ px
    return torch.where(torch.from_numpy(mask), patch, fm)


def reverse_roi_align(fm: torch.Tensor, comp: torch.Tensor, box: tuple[float, float, float, float],
                      expected_size: tuple[int, int] | None = None) -> torch.Tensor:
    """Resample ``comp`` onto the box's cells of ``fm`` and paste it.

    Returns a new tensor; elements outside the box are copied untouched.
    """
    if comp.shape[0] != fm.shape[0]:
        raise ShapeError(f"channel mismatch: component {comp.shape[0]} vs map {fm.shape[0]}")
    if expected_size is not None and tuple(comp.shape[-2:]) != tuple(expected_size):
        raise ShapeError(f"component is {tuple(comp.shape[-2:])}, expected {tuple(expected_size)}")
    return reverse_roi_align_batch(fm[None], comp[None], [box])[0]
