"""Synthetic degradation: blur, resample, additive noise and JPEG.

The pipeline is ``JPEG_q(downsample_r(image * k) + n_sigma)``. Images are
``H x W x 3`` float arrays in ``[0, 1]``; the noise level is given on the
0-255 intensity scale.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage, signal
from scipy.interpolate import CubicSpline

from .errors import ParameterError

NUM_MOTION_KERNELS = 32
MOTION_BANK_SEED = 20200823
MOTION_BANK_VERSION = 1

GAUSSIAN_SIGMA_GRID = np.round(np.arange(10, 51) / 10.0, 1)   # {1:0.1:5}
SCALE_GRID = np.round(np.arange(10, 81) / 10.0, 1)            # {1:0.1:8}
NOISE_GRID = np.arange(0, 16, dtype=np.float64)               # {0:1:15}
JPEG_GRID = np.arange(40, 81)                                 # {40:1:80}


@dataclass(frozen=True, eq=False)
class BlurKernel:
    kind: str
    taps: np.ndarray
    gaussian_sigma: float | None = None
    motion_index: int | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "motion"):
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ParameterError(f"kernel must be 2-D with odd extent, got {taps.shape}")
        if (taps < 0).any() or abs(taps.sum() - 1.0) > 1e-6:
            raise ParameterError("kernel taps must be non-negative and sum to 1")
        object.__setattr__(self, "taps", taps)

    @property
    def spec(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian:{self.gaussian_sigma:g}"
        return f"motion:{self.motion_index}"

    def __eq__(self, other):
        if not isinstance(other, BlurKernel):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.taps, other.taps)

    def __hash__(self):
        return hash((self.spec, self.taps.shape))

    @property
    def is_delta(self) -> bool:
        c = tuple(s // 2 for s in self.taps.shape)
        return self.taps[c] == 1.0


@dataclass(frozen=True)
class DegradationParams:
    """One draw of the degradation model.

    ``jpeg_quality=None`` bypasses compression; only tests use that.
    """

    kernel: BlurKernel
    downsample_factor: float = 1.0
    noise_sigma: float = 0.0
    jpeg_quality: int | None = 75

    def __post_init__(self):
        if not 1.0 <= self.downsample_factor <= 8.0:
            raise ParameterError(f"downsample factor {self.downsample_factor} outside [1, 8]")
        if not 0.0 <= self.noise_sigma <= 15.0:
            raise ParameterError(f"noise sigma {self.noise_sigma} outside [0, 15]")
        if self.jpeg_quality is not None:
            if int(self.jpeg_quality) != self.jpeg_quality or not 40 <= self.jpeg_quality <= 80:
                raise ParameterError(f"jpeg quality {self.jpeg_quality} outside 40..80")

    def to_manifest(self) -> str:
        lines = [
            f"kernel={self.kernel.spec}",
            f"r={self.downsample_factor:g}",
            f"sigma={self.noise_sigma:g}",
            f"q={'none' if self.jpeg_quality is None else self.jpeg_quality}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "DegradationParams":
        fields = dict(
            line.split("=", 1) for line in text.splitlines() if "=" in line
        )
        q = fields.get("q", "none")
        return cls(
            kernel=parse_kernel_spec(fields["kernel"]),
            downsample_factor=float(fields["r"]),
            noise_sigma=float(fields["sigma"]),
            jpeg_quality=None if q == "none" else int(q),
        )


def gaussian_kernel(sigma: float, size: int | None = None) -> BlurKernel:
    """Isotropic Gaussian taps normalized to unit sum.

    ``size`` defaults to ``2 * ceil(3 * sigma) + 1``.
    """
    if not sigma > 0:
        raise ParameterError(f"gaussian sigma must be positive, got {sigma}")
    if size is None:
        size = 2 * int(np.ceil(3 * sigma)) + 1
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be odd and positive, got {size}")
    ax = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    taps = np.outer(g, g)
    taps /= taps.sum()
    return BlurKernel("gaussian", taps, gaussian_sigma=float(sigma))


def _motion_length(index: int) -> int:
    return 5 + 2 * (index % 8)


def motion_kernel(index: int, rng_seed: int = MOTION_BANK_SEED, length: int | None = None) -> BlurKernel:
    """Rasterize a smoothed random-walk camera trajectory.

    The trajectory's largest extent is ``length - 1`` pixels, so
    ``length=1`` yields a delta kernel.
    """
    if not 0 <= index < NUM_MOTION_KERNELS:
        raise ParameterError(f"motion kernel index {index} outside [0, {NUM_MOTION_KERNELS - 1}]")
    if length is None:
        length = _motion_length(index)
    if length < 1:
        raise ParameterError(f"trajectory length must be >= 1, got {length}")
    rng = np.random.default_rng([rng_seed, index])

    n_ctrl = 6
    angle = rng.uniform(0, 2 * np.pi)
    turns = rng.normal(0.0, 0.7, size=n_ctrl - 1)
    steps = rng.uniform(0.5, 1.5, size=n_ctrl - 1)
    pts = [np.zeros(2)]
    for turn, step in zip(turns, steps):
        angle += turn
        pts.append(pts[-1] + step * np.array([np.cos(angle), np.sin(angle)]))
    pts = np.asarray(pts)
    spline = CubicSpline(np.linspace(0, 1, n_ctrl), pts, axis=0)
    path = spline(np.linspace(0, 1, 40 * max(length, 2)))

    path -= (path.max(0) + path.min(0)) / 2
    extent = np.abs(path).max() * 2
    scale = (length - 1) / extent if extent > 0 else 0.0
    path *= scale

    size = length + 2 if length % 2 == 1 else length + 3
    c = size // 2
    taps = np.zeros((size, size))
    xs, ys = path[:, 0] + c, path[:, 1] + c
    x0, y0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            np.add.at(taps, (y0 + dy, x0 + dx), wy * wx)
    taps /= taps.sum()
    return BlurKernel("motion", taps, motion_index=int(index))


def generate_motion_bank(rng_seed: int = MOTION_BANK_SEED) -> list[np.ndarray]:
    return [motion_kernel(i, rng_seed).taps for i in range(NUM_MOTION_KERNELS)]


@lru_cache(maxsize=1)
def _frozen_bank() -> tuple[np.ndarray, ...]:
    with resources.files("dfdnet").joinpath("data/motion_kernels.npz").open("rb") as fh:
        data = np.load(fh)
        if int(data["version"]) != MOTION_BANK_VERSION:
            raise ParameterError("motion kernel bank version mismatch")
        return tuple(data[f"k{i:02d}"] for i in range(NUM_MOTION_KERNELS))


def motion_bank_kernel(index: int) -> BlurKernel:
    """Kernel ``index`` of the frozen, versioned bank shipped with the package."""
    if not 0 <= index < NUM_MOTION_KERNELS:
        raise ParameterError(f"motion kernel index {index} outside [0, {NUM_MOTION_KERNELS - 1}]")
    return BlurKernel("motion", _frozen_bank()[index], motion_index=int(index))


def write_motion_bank(path, rng_seed: int = MOTION_BANK_SEED) -> None:
    bank = generate_motion_bank(rng_seed)
    np.savez(path, version=MOTION_BANK_VERSION, seed=rng_seed,
             **{f"k{i:02d}": k for i, k in enumerate(bank)})


def parse_kernel_spec(spec: str) -> BlurKernel:
    kind, _, value = spec.partition(":")
    if kind == "gaussian":
        return gaussian_kernel(float(value))
    if kind == "motion":
        return motion_bank_kernel(int(value))
    raise ParameterError(f"bad kernel spec {spec!r}; expected gaussian:SIGMA or motion:IDX")


def sample_degradation(rng: np.random.Generator, downsample_factor: float | None = None) -> DegradationParams:
    """Draw kernel, scale, noise and quality uniformly from their grids.

    Passing ``downsample_factor`` pins the scale (fixed-factor SR tasks).
    """
    if rng.integers(2) == 0:
        kernel = gaussian_kernel(float(rng.choice(GAUSSIAN_SIGMA_GRID)))
    else:
        kernel = motion_bank_kernel(int(rng.integers(NUM_MOTION_KERNELS)))
    r = float(rng.choice(SCALE_GRID))
    sigma = float(rng.choice(NOISE_GRID))
    q = int(rng.choice(JPEG_GRID))
    if downsample_factor is not None:
        r = float(downsample_factor)
    return DegradationParams(kernel, r, sigma, q)


def blur(image: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if kernel.is_delta:
        return image.copy()
    k = kernel.taps
    if k.size <= 25:
        out = np.empty_like(image)
        for ch in range(image.shape[2]):
            out[..., ch] = ndimage.convolve(image[..., ch], k, mode="reflect")
        return out
    # same symmetric boundary as the direct path, via FFT for large kernels
    ph, pw = k.shape[0] // 2, k.shape[1] // 2
    padded = np.pad(image, ((ph, ph), (pw, pw), (0, 0)), mode="symmetric")
    return signal.fftconvolve(padded, k[..., None], mode="valid", axes=(0, 1))


def resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bicubic resampling to ``(height, width)``, antialiased when shrinking."""
    h, w = image.shape[:2]
    if (h, w) == tuple(size):
        return np.asarray(image, dtype=np.float64).copy()
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float64)).permute(2, 0, 1)[None]
    shrink = size[0] < h or size[1] < w
    out = F.interpolate(t, size=tuple(size), mode="bicubic", align_corners=False, antialias=shrink)
    return out[0].permute(1, 2, 0).numpy()


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0


def apply_degradation(image: np.ndarray, params: DegradationParams, noise_seed: int = 0) -> np.ndarray:
    """Degrade ``image``; output size is ``round(H / r) x round(W / r)``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ParameterError(f"expected an H x W x 3 image, got shape {image.shape}")
    out = blur(image, params.kernel)
    r = params.downsample_factor
    if r != 1.0:
        h, w = image.shape[:2]
        out = resize(out, (max(1, int(round(h / r))), max(1, int(round(w / r)))))
    if params.noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        out = out + rng.normal(0.0, params.noise_sigma / 255.0, size=out.shape)
    out = np.clip(out, 0.0, 1.0)
    if params.jpeg_quality is not None:
        out = jpeg_roundtrip(out, params.jpeg_quality)
    return out
