"""Offline component dictionaries: sample pooling, clustering and storage.

On-disk layout of a dictionary directory::

    manifest.txt                 key=value lines
    dic_s<scale>_<component>.bin one K x C x h x w float32 tensor each

A tensor file starts with a 16-byte header (``b"DFDD"``, u32 version,
u32 rank, 4 reserved bytes), then ``rank`` little-endian u64 dims, then
row-major little-endian float32 values.
"""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .errors import CorruptionError, DataError, ParameterError
from .features import (COMPONENTS, SCALES, Encoder, component_rois, component_size,
                       extract_features, roi_align)
from .kmeans import kmeans

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"DFDD"
_HEADER = struct.Struct("<4sII4x")
DEFAULT_CLUSTERS = 256


@dataclass
class ComponentDictionary:
    scale: int
    component: str
    clusters: np.ndarray  # K x C x h x w, float32

    def __post_init__(self):
        self.clusters = np.ascontiguousarray(self.clusters, dtype=np.float32)
        if self.clusters.ndim != 4 or self.clusters.shape[0] < 1:
            raise ParameterError(f"({self.scale},{self.component}): clusters must be K x C x h x w")
        if not np.isfinite(self.clusters).all():
            raise DataError(f"({self.scale},{self.component}): non-finite cluster values")

    @property
    def k(self) -> int:
        return self.clusters.shape[0]


@dataclass
class DictionarySet:
    entries: dict[tuple[int, str], ComponentDictionary]
    k: int
    encoder_hash: str
    seed: int = 0
    sample_count: int = 0
    encoder_desc: str = ""
    resolution: int = 256
    _tensor_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        missing = [(s, c) for s in SCALES for c in COMPONENTS if (s, c) not in self.entries]
        if missing:
            raise ParameterError(f"dictionary set is missing entries {missing}")
        for (s, c), d in self.entries.items():
            if d.k != self.k:
                raise ParameterError(f"dictionary ({s},{c}) has K={d.k}, manifest K={self.k}")

    def __getitem__(self, key: tuple[int, str]) -> ComponentDictionary:
        return self.entries[key]

    def tensor(self, scale: int, component: str, dtype=torch.float32) -> torch.Tensor:
        key = (scale, component, dtype)
        if key not in self._tensor_cache:
            self._tensor_cache[key] = torch.from_numpy(self.entries[(scale, component)].clusters).to(dtype)
        return self._tensor_cache[key]

    def manifest_lines(self) -> list[str]:
        lines = [
            f"format_version={FORMAT_VERSION}",
            f"K={self.k}",
            f"encoder_hash={self.encoder_hash}",
            f"encoder={self.encoder_desc}",
            f"resolution={self.resolution}",
            f"seed={self.seed}",
            f"sample_count={self.sample_count}",
        ]
        for s in SCALES:
            for c in COMPONENTS:
                lines.append(f"shape_{s}_{c}={','.join(map(str, self.entries[(s, c)].clusters.shape))}")
        return lines


def collect_samples(dataset: Iterable, encoder: Encoder) -> tuple[dict[tuple[int, str], np.ndarray], int]:
    """Pool flattened component crops of every usable image.

    ``dataset`` yields ``(image_id, image, landmarks)`` with ``landmarks``
    possibly ``None``; such images are skipped with a warning. Returns the
    pools keyed by ``(scale, component)`` and the number of images used.
    """
    pools: dict[tuple[int, str], list[np.ndarray]] = {(s, c): [] for s in SCALES for c in COMPONENTS}
    res = encoder.config.resolution
    used = 0
    for image_id, image, landmarks in dataset:
        if landmarks is None:
            log.warning("no landmarks for %s; skipping", image_id)
            continue
        with torch.no_grad():
            feats = extract_features(image, encoder)
        boxes = component_rois(landmarks, (res, res))
        for s, fm in zip(SCALES, feats):
            for box in boxes:
                size = component_size(box.component, s, res)
                crop = roi_align(fm[0], box.at_scale(s), (size, size))
                pools[(s, box.component)].append(crop.reshape(-1).numpy().astype(np.float64))
        used += 1
    if used == 0:
        raise DataError("no usable images: every image lacked landmarks")
    return {key: np.stack(v) for key, v in pools.items()}, used


def build_dictionary(dataset: Iterable, encoder: Encoder, k: int = DEFAULT_CLUSTERS, seed: int = 0) -> DictionarySet:
    """Cluster every (scale, component) pool into ``k`` centroids."""
    if k < 1:
        raise ParameterError(f"K must be >= 1, got {k}")
    pools, used = collect_samples(dataset, encoder)
    res = encoder.config.resolution
    entries = {}
    for s, c in pools:
        size = component_size(c, s, res)
        channels = encoder.channels[s - 1]
        result = kmeans(pools[(s, c)], k, seed=seed)
        entries[(s, c)] = ComponentDictionary(s, c, result.centroids.reshape(k, channels, size, size))
        log.info("scale %d %s: inertia %.4g after %d iterations", s, c, result.inertia, result.n_iter)
    return DictionarySet(entries, k, encoder.content_hash(), seed=seed, sample_count=used,
                         encoder_desc=encoder.config.describe(), resolution=res)


# -- storage -----------------------------------------------------------------


def _tensor_name(scale: int, component: str) -> str:
    return f"dic_s{scale}_{component}.bin"


def _encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + dims + arr.tobytes()


def _decode_tensor(blob: bytes, where: str) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise CorruptionError(f"{where}: file shorter than header")
    magic, version, rank = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptionError(f"{where}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptionError(f"{where}: unsupported version {version}")
    if rank != 4:
        raise CorruptionError(f"{where}: expected rank 4, header says {rank}")
    off = _HEADER.size + 8 * rank
    if len(blob) < off:
        raise CorruptionError(f"{where}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", blob, _HEADER.size)
    expected = off + 4 * int(np.prod(dims))
    if len(blob) != expected:
        raise CorruptionError(f"{where}: size {len(blob)} bytes, header implies {expected}")
    return np.frombuffer(blob, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def save_dictionary(dset: DictionarySet, path) -> None:
    """Write ``dset`` to directory ``path`` atomically (temp dir + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        lines = dset.manifest_lines()
        for s in SCALES:
            for c in COMPONENTS:
                blob = _encode_tensor(dset.entries[(s, c)].clusters)
                (tmp / _tensor_name(s, c)).write_bytes(blob)
                lines.append(f"sha256_{s}_{c}={hashlib.sha256(blob).hexdigest()}")
        (tmp / "manifest.txt").write_text("\n".join(lines) + "\n")
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def read_manifest(path) -> dict[str, str]:
    text = Path(path).read_text()
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, sep, value = line.partition("=")
            if not sep:
                raise CorruptionError(f"{path}: malformed manifest line {line!r}")
            out[key.strip()] = value.strip()
    return out


def load_dictionary(path) -> DictionarySet:
    """Load and validate a dictionary directory.

    Raises :class:`CorruptionError` on any mismatch between the manifest,
    tensor headers and file contents; nothing is returned in that case.
    """
    path = Path(path)
    manifest_path = path / "manifest.txt"
    if not manifest_path.is_file():
        raise CorruptionError(f"{path}: no manifest.txt")
    m = read_manifest(manifest_path)
    try:
        if int(m["format_version"]) != FORMAT_VERSION:
            raise CorruptionError(f"{path}: unsupported format_version {m['format_version']}")
        k = int(m["K"])
        encoder_hash = m["encoder_hash"]
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"{path}: manifest missing or malformed field: {exc}") from None

    entries = {}
    for s in SCALES:
        for c in COMPONENTS:
            where = f"dictionary (s={s}, c={c})"
            try:
                shape = tuple(int(v) for v in m[f"shape_{s}_{c}"].split(","))
            except (KeyError, ValueError):
                raise CorruptionError(f"{where}: manifest shape entry missing or malformed") from None
            if shape[0] != k:
                raise CorruptionError(f"{where}: manifest K={k} but shape entry says K={shape[0]}")
            fpath = path / _tensor_name(s, c)
            if not fpath.is_file():
                raise CorruptionError(f"{where}: missing {fpath.name}")
            blob = fpath.read_bytes()
            digest = m.get(f"sha256_{s}_{c}")
            if digest is not None and hashlib.sha256(blob).hexdigest() != digest:
                # size/header checks give the more specific message when they apply
                _decode_tensor(blob, where)
                raise CorruptionError(f"{where}: content hash mismatch")
            arr = _decode_tensor(blob, where)
            if arr.shape != shape:
                raise CorruptionError(f"{where}: tensor header shape {arr.shape} != manifest {shape}")
            if not np.isfinite(arr).all():
                raise CorruptionError(f"{where}: non-finite values")
            entries[(s, c)] = ComponentDictionary(s, c, arr)
    return DictionarySet(entries, k, encoder_hash, seed=int(m.get("seed", 0)),
                         sample_count=int(m.get("sample_count", 0)),
                         encoder_desc=m.get("encoder", ""), resolution=int(m.get("resolution", 256)))
