"""Dictionary feature transfer: re-normalize, match, fuse, paste back."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError, ShapeError
from .features import COMPONENTS, RoiBox, component_size, reverse_roi_align_batch, roi_align_batch

log = logging.getLogger(__name__)

EPS = 1e-5


def channel_stats(x: torch.Tensor, eps: float = EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel mean and ``sqrt(var + eps)`` over the last two dims."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
    return mean, torch.sqrt(var + eps)


def cadain(cluster: torch.Tensor, input_comp: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Give ``cluster`` the per-channel mean and std of ``input_comp``.

    ``cluster`` may carry a leading K dimension; statistics are taken per
    cluster and channel over the spatial dims.
    """
    if cluster.shape[-3:] != input_comp.shape[-3:]:
        raise ShapeError(f"cluster {tuple(cluster.shape)} does not match input {tuple(input_comp.shape)}")
    mu_d, sd_d = channel_stats(cluster, eps)
    mu_f, sd_f = channel_stats(input_comp, eps)
    return sd_f * (cluster - mu_d) / sd_d + mu_f


@dataclass
class MatchResult:
    scores: torch.Tensor     # (K,)
    index: int
    selected: torch.Tensor   # C x h x w


def match_scores(input_comp: torch.Tensor, clusters: torch.Tensor, use_cadain: bool = True,
                 mode: str = "inner") -> torch.Tensor:
    """Similarity of ``input_comp`` to each of the K clusters.

    The input acts as a bias-free convolution kernel slid over the stack of
    (re-normalized) clusters; with equal sizes that is one inner product
    per cluster.
    """
    if clusters.ndim != 4 or clusters.shape[0] == 0:
        raise ParameterError("dictionary must hold K >= 1 clusters")
    if clusters.shape[1:] != input_comp.shape:
        raise ShapeError(f"dictionary clusters {tuple(clusters.shape[1:])} vs input {tuple(input_comp.shape)}")
    ref = cadain(clusters, input_comp) if use_cadain else clusters
    scores = F.conv2d(ref, input_comp[None]).reshape(-1)
    if mode == "cosine":
        norms = ref.flatten(1).norm(dim=1) * input_comp.norm()
        scores = scores / norms.clamp_min(1e-12)
    elif mode != "inner":
        raise ParameterError(f"unknown match mode {mode!r}")
    return scores


def batch_match_scores(comps: torch.Tensor, clusters: torch.Tensor, use_cadain: bool = True,
                       mode: str = "inner") -> torch.Tensor:
    """``B x K`` version of :func:`match_scores` for ``B x C x h x w`` inputs.

    The re-normalized clusters are never materialized: the inner product is
    expanded into per-channel cross sums, means and stds.
    """
    if clusters.ndim != 4 or clusters.shape[0] == 0:
        raise ParameterError("dictionary must hold K >= 1 clusters")
    if clusters.shape[1:] != comps.shape[1:]:
        raise ShapeError(f"dictionary clusters {tuple(clusters.shape[1:])} vs input {tuple(comps.shape[1:])}")
    if mode not in ("inner", "cosine"):
        raise ParameterError(f"unknown match mode {mode!r}")
    n = comps.shape[-1] * comps.shape[-2]
    f = comps.flatten(2)                                  # B C P
    d = clusters.flatten(2)                               # K C P
    cross = torch.einsum("kcp,bcp->bkc", d, f)            # B K C
    if not use_cadain:
        scores = cross.sum(-1)
        if mode == "cosine":
            norms = d.flatten(1).norm(dim=1)[None] * f.flatten(1).norm(dim=1)[:, None]
            scores = scores / norms.clamp_min(1e-12)
        return scores
    mu_d, sd_d = (t.flatten(1)[None] for t in channel_stats(clusters))     # 1 K C
    mu_f, sd_f = (t.flatten(1)[:, None] for t in channel_stats(comps))     # B 1 C
    sum_f = f.sum(-1)[:, None]                                              # B 1 C
    scores = (sd_f / sd_d * (cross - mu_d * sum_f) + mu_f * sum_f).sum(-1)
    if mode == "cosine":
        var_d = sd_d ** 2 - EPS
        ref_sq = (n * (sd_f ** 2 / sd_d ** 2 * var_d + mu_f ** 2)).sum(-1)
        norms = ref_sq.clamp_min(0).sqrt() * f.flatten(1).norm(dim=1)[:, None]
        scores = scores / norms.clamp_min(1e-12)
    return scores


def first_argmax(scores: torch.Tensor) -> int:
    return int(torch.nonzero(scores == scores.max())[0, 0])


def feature_match(input_comp: torch.Tensor, clusters: torch.Tensor, use_cadain: bool = True,
                  mode: str = "inner") -> MatchResult:
    with torch.no_grad():
        scores = match_scores(input_comp.detach(), clusters, use_cadain, mode)
    k = first_argmax(scores)
    chosen = clusters[k]
    selected = cadain(chosen, input_comp) if use_cadain else chosen
    return MatchResult(scores, k, selected)


class ConfidenceBlock(nn.Module):
    """Two 3x3 convolutions and a sigmoid: per-element weights in (0, 1).

    ``force(v)`` pins the output to the constant ``v`` (ablations, tests).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.forced: float | None = None

    def force(self, value: float | None) -> "ConfidenceBlock":
        self.forced = value
        return self

    def forward(self, residual: torch.Tensor) -> torch.Tensor:
        if self.forced is not None:
            return torch.full_like(residual, self.forced)
        squeeze = residual.ndim == 3
        x = residual[None] if squeeze else residual
        x = torch.sigmoid(self.conv2(F.leaky_relu(self.conv1(x), 0.2)))
        return x[0] if squeeze else x


def confidence_fuse(input_comp: torch.Tensor, selected: torch.Tensor, block: ConfidenceBlock) -> torch.Tensor:
    """``F + RDic * conf(RDic - F)``."""
    if selected.shape != input_comp.shape:
        raise ShapeError(f"selected {tuple(selected.shape)} vs input {tuple(input_comp.shape)}")
    return input_comp + selected * block(selected - input_comp)


@dataclass
class ComponentDiagnostics:
    scale: int
    component: str
    k_star: int
    mean_confidence: float


class DFTBlock(nn.Module):
    """Crop, match, fuse and paste the four components at one scale.

    ``use_confidence=False`` swaps the matched feature in directly instead
    of gating it. All crops are taken from the incoming map; pastes are
    applied in component order, so a later component wins where boxes
    overlap.
    """

    def __init__(self, scale: int, channels: int, resolution: int, use_cadain: bool = True,
                 use_confidence: bool = True, match_mode: str = "inner"):
        super().__init__()
        self.scale = scale
        self.resolution = resolution
        self.use_cadain = use_cadain
        self.use_confidence = use_confidence
        self.match_mode = match_mode
        self.confidence = ConfidenceBlock(channels)

    def forward(self, fm: torch.Tensor, boxes: list[list[RoiBox]], dictionary,
                diagnostics: list | None = None) -> torch.Tensor:
        """``fm`` is ``B x C x H x W``; ``boxes[b]`` holds sample b's components.

        When given, ``diagnostics`` receives one list per sample.
        """
        B = fm.shape[0]
        if len(boxes) != B:
            raise ShapeError(f"{len(boxes)} box lists for a batch of {B}")
        per_sample = [[] for _ in range(B)]
        by_comp: dict[str, list[tuple[int, tuple]]] = {}
        for b, sample_boxes in enumerate(boxes):
            for box in sample_boxes:
                fbox = box.at_scale(self.scale)
                if not (fbox[2] > fbox[0] and fbox[3] > fbox[1]):
                    log.warning("scale %d: skipping degenerate %s box", self.scale, box.component)
                    continue
                by_comp.setdefault(box.component, []).append((b, fbox))

        out = fm
        for comp_name in (c for c in COMPONENTS if c in by_comp):
            idx, fboxes = zip(*by_comp[comp_name])
            idx = list(idx)
            size = component_size(comp_name, self.scale, self.resolution)
            comps = roi_align_batch(fm[idx], fboxes, (size, size))
            clusters = dictionary.tensor(self.scale, comp_name, fm.dtype)
            with torch.no_grad():
                scores = batch_match_scores(comps.detach(), clusters, self.use_cadain, self.match_mode)
            k_star = [first_argmax(row) for row in scores]
            chosen = clusters[k_star]
            selected = cadain(chosen, comps) if self.use_cadain else chosen
            if self.use_confidence:
                conf = self.confidence(selected - comps)
                fused = comps + selected * conf
            else:
                conf = torch.ones_like(comps)
                fused = selected
            if len(idx) == B:
                out = reverse_roi_align_batch(out, fused, fboxes)
            else:
                rows = reverse_roi_align_batch(out[idx], fused, fboxes)
                out = out.index_copy(0, torch.tensor(idx), rows)
            mean_conf = conf.detach().flatten(1).mean(1)
            for j, b in enumerate(idx):
                per_sample[b].append(ComponentDiagnostics(self.scale, comp_name, k_star[j], float(mean_conf[j])))
        if diagnostics is not None:
            diagnostics.extend(per_sample)
        return out

    def forward_single(self, fm: torch.Tensor, boxes: list[RoiBox], dictionary,
                       diagnostics: list | None = None) -> torch.Tensor:
        diag = [] if diagnostics is not None else None
        out = self.forward(fm[None], [boxes], dictionary, diag)[0]
        if diagnostics is not None:
            diagnostics.extend(diag[0])
        return out


def dft_block(fm: torch.Tensor, boxes: list[RoiBox], dictionary, block: DFTBlock) -> torch.Tensor:
    """Apply ``block`` to a single ``C x H x W`` feature map."""
    return block.forward_single(fm, boxes, dictionary)
