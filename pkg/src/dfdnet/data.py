"""Image/landmark ingestion and degraded-pair synthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .degradation import DegradationParams, apply_degradation, resize, sample_degradation
from .errors import ParameterError, ShapeError
from .features import load_landmarks

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
TASK_SCALE = {"x4": 4.0, "x8": 8.0, "blind": None}


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, image) -> None:
    u8 = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def load_dataset(images_dir, landmarks_dir=None):
    """``(image_id, image, landmarks | None)`` for every image in ``images_dir``.

    Landmarks are read from ``<landmarks_dir>/<stem>.txt``.
    """
    images_dir = Path(images_dir)
    landmarks_dir = Path(landmarks_dir) if landmarks_dir is not None else None
    out = []
    for p in sorted(images_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        lm = None
        if landmarks_dir is not None:
            lp = landmarks_dir / f"{p.stem}.txt"
            if lp.is_file():
                lm = load_landmarks(lp)
        out.append((p.stem, load_image(p), lm))
    return out


@dataclass
class Pair:
    image_id: str
    hq: np.ndarray
    degraded: np.ndarray      # at degraded resolution
    upsampled: np.ndarray     # bicubically resampled back to network size
    landmarks: np.ndarray
    params: DegradationParams
    noise_seed: int
    task: str

    def manifest(self) -> str:
        return (f"id={self.image_id}\ntask={self.task}\nnoise_seed={self.noise_seed}\n"
                f"landmarks=ground_truth\n" + self.params.to_manifest())


def degrade_for_task(image: np.ndarray, task: str, rng: np.random.Generator):
    if task not in TASK_SCALE:
        raise ParameterError(f"unknown task {task!r}")
    params = sample_degradation(rng, downsample_factor=TASK_SCALE[task])
    noise_seed = int(rng.integers(2 ** 31))
    degraded = apply_degradation(image, params, noise_seed)
    up = np.clip(resize(degraded, image.shape[:2]), 0.0, 1.0)
    return params, noise_seed, degraded, up


def make_pairs(dataset, task: str, seed: int) -> list[Pair]:
    """Degrade every HQ image for ``task`` (``x4``, ``x8`` or ``blind``).

    Images without landmarks are skipped. The HQ landmarks are reused for
    the degraded image.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for image_id, image, landmarks in dataset:
        if landmarks is None:
            log.warning("no landmarks for %s; skipping", image_id)
            continue
        if image.shape[0] != image.shape[1]:
            raise ShapeError(f"{image_id}: expected a square image, got {image.shape[:2]}")
        params, noise_seed, degraded, up = degrade_for_task(image, task, rng)
        pairs.append(Pair(image_id, image, degraded, up, np.asarray(landmarks), params, noise_seed, task))
    return pairs


def write_pairs(pairs: list[Pair], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p in pairs:
        save_image(out_dir / f"{p.image_id}.png", p.degraded)
        (out_dir / f"{p.image_id}.params.txt").write_text(p.manifest())
