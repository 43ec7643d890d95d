"""Class-activation-map region alignment.

A linear pixel classifier ``theta`` (M x C) applied to an image feature map
(C x H x W) gives one activation heatmap per class.  For a point whose class
is ``y``, the heatmap of ``y`` is min-max normalized, thresholded at ``tau``
and used to gate the feature map; the surviving pixel features are averaged
into one region vector that is concatenated with the point's own feature and
its pixel feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, LabelError

DEFAULT_TAU = 0.7


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    camera_index: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionError(f"feature map must be C x H x W, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DimensionError("feature map has non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape_hw(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class PixelClassifier:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] < 2:
            raise DimensionError(f"classifier must be M x C with M >= 2, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DimensionError("classifier has non-finite entries")
        object.__setattr__(self, "theta", theta)

    @property
    def n_classes(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class CamStack:
    data: np.ndarray


@dataclass(frozen=True)
class RegionFeature:
    vector: np.ndarray
    support_size: int


def _check_channels(fm: FeatureMap, clf: PixelClassifier):
    if clf.theta.shape[1] != fm.channels:
        raise DimensionError(
            f"classifier expects {clf.theta.shape[1]} channels, feature map has {fm.channels}"
        )


def compute_cams(fm: FeatureMap, clf: PixelClassifier) -> CamStack:
    _check_channels(fm, clf)
    return CamStack(np.einsum("mc,chw->mhw", clf.theta, fm.data))


def classify_pixels(fm: FeatureMap, clf: PixelClassifier):
    """Per-pixel logits (M x H x W) and argmax labels; ties go to the lower class."""
    logits = compute_cams(fm, clf).data
    return logits, np.argmax(logits, axis=0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def pointly_supervised_loss(logits_at_pixels, point_labels) -> float:
    """Mean cross-entropy between pixel logits and the labels of their points.

    Returns 0.0 for a camera that received no points.
    """
    logits = np.asarray(logits_at_pixels, dtype=np.float64)
    labels = np.asarray(point_labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        return 0.0
    logits = logits.reshape(len(labels), -1)
    m = logits.shape[1]
    if labels.min() < 0 or labels.max() >= m:
        raise LabelError(f"labels must lie in [0, {m})")
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def normalize_channel(channel: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant channel maps to all zeros."""
    lo, hi = channel.min(), channel.max()
    if hi <= lo:
        return np.zeros_like(channel, dtype=np.float64)
    return (channel - lo) / (hi - lo)


def build_gate(cams: CamStack, y: int, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Heatmap of class ``y`` on the normalized scale, zeroed below ``tau``.

    A constant heatmap carries no localization and yields an empty gate.
    """
    if not 0 <= y < cams.data.shape[0]:
        raise LabelError(f"class {y} outside [0, {cams.data.shape[0]})")
    channel = cams.data[y]
    if channel.max() <= channel.min():
        return np.zeros_like(channel, dtype=np.float64)
    norm = normalize_channel(channel)
    return np.where(norm >= tau, norm, 0.0)


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x,
    "relu": lambda x: np.maximum(x, 0.0),
}


def gather_region_feature(gate: np.ndarray, fm: FeatureMap, activation: str = "identity") -> RegionFeature:
    """Average of activated, gated pixel features over the gate's support."""
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != fm.shape_hw:
        raise DimensionError(f"gate {gate.shape} does not match feature map {fm.shape_hw}")
    act = ACTIVATIONS[activation]
    rows = act(gate[None] * fm.data).reshape(fm.channels, -1).T
    keep = gate.reshape(-1) != 0
    n = int(keep.sum())
    if n == 0:
        return RegionFeature(np.zeros(fm.channels), 0)
    return RegionFeature(rows[keep].mean(axis=0), n)


def fuse_point_feature(mlp_feat, pixel_feat, region_feat: RegionFeature) -> np.ndarray:
    """Concatenate as [point | pixel | region]."""
    mlp_feat = np.asarray(mlp_feat, dtype=np.float64).reshape(-1)
    pixel_feat = np.asarray(pixel_feat, dtype=np.float64).reshape(-1)
    region = np.asarray(region_feat.vector, dtype=np.float64).reshape(-1)
    if not len(mlp_feat) == len(pixel_feat) == len(region):
        raise DimensionError(
            f"widths differ: point {len(mlp_feat)}, pixel {len(pixel_feat)}, region {len(region)}"
        )
    return np.concatenate([mlp_feat, pixel_feat, region])


def _to_feature_coords(pixels: np.ndarray, fm: FeatureMap, image_size):
    h2d, w2d = fm.shape_hw
    width, height = image_size if image_size is not None else (w2d, h2d)
    return pixels[:, 0] * (w2d / width), pixels[:, 1] * (h2d / height)


def nearest_index(coord: np.ndarray, size: int) -> np.ndarray:
    """Round half down, then clamp into [0, size)."""
    return np.clip(np.ceil(coord - 0.5), 0, size - 1).astype(np.int64)


def lookup_pixel_features(fm: FeatureMap, pixels, image_size=None, mode: str = "nearest") -> np.ndarray:
    """Sample the feature map at image pixels; returns (n, C).

    ``image_size`` is (width, height) of the camera image when the feature map
    has a different resolution.  Pixel centres sit on integer coordinates.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = _to_feature_coords(pixels, fm, image_size)
    h2d, w2d = fm.shape_hw
    if mode == "nearest":
        return fm.data[:, nearest_index(v, h2d), nearest_index(u, w2d)].T
    if mode != "bilinear":
        raise ValueError(f"unknown lookup mode {mode!r}")
    u = np.clip(u, 0, w2d - 1)
    v = np.clip(v, 0, h2d - 1)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u1 = np.minimum(u0 + 1, w2d - 1)
    v1 = np.minimum(v0 + 1, h2d - 1)
    du, dv = u - u0, v - v0
    d = fm.data
    out = (
        d[:, v0, u0] * (1 - du) * (1 - dv)
        + d[:, v0, u1] * du * (1 - dv)
        + d[:, v1, u0] * (1 - du) * dv
        + d[:, v1, u1] * du * dv
    )
    return out.T


def lookup_pixel_labels(labels: np.ndarray, pixels, image_size=None) -> np.ndarray:
    h2d, w2d = labels.shape
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    width, height = image_size if image_size is not None else (w2d, h2d)
    u = pixels[:, 0] * (w2d / width)
    v = pixels[:, 1] * (h2d / height)
    return labels[nearest_index(v, h2d), nearest_index(u, w2d)]


def region_alignment(
    pixel_map,
    feature_maps: list[FeatureMap],
    clf: PixelClassifier,
    point_features: np.ndarray,
    image_sizes=None,
    tau: float = DEFAULT_TAU,
    point_labels=None,
    activation: str = "identity",
    lookup: str = "nearest",
):
    """Fused [point | pixel | region] feature for every entry of a point-pixel map.

    Gates depend only on (camera, class), so region vectors are computed once
    per pair.  The gate class is the point's label when ``point_labels`` is
    given, otherwise the classifier's prediction at the projected pixel.

    Returns ``(fused, losses)`` where ``fused`` is (len(pixel_map), 3C) and
    ``losses`` maps camera index to its pointly-supervised loss (only when
    point labels are available).
    """
    point_features = np.asarray(point_features, dtype=np.float64)
    c = clf.theta.shape[1]
    if point_features.shape[1] != c:
        raise DimensionError(f"point features have width {point_features.shape[1]}, expected {c}")
    fused = np.zeros((len(pixel_map), 3 * c))
    losses: dict[int, float] = {}
    for k, fm in enumerate(feature_maps):
        sel = np.flatnonzero(pixel_map.camera_index == k)
        if len(sel) == 0:
            if point_labels is not None:
                losses[k] = 0.0
            continue
        size = None if image_sizes is None else image_sizes[k]
        pixels = pixel_map.pixels[sel]
        pts = pixel_map.point_index[sel]
        cams = compute_cams(fm, clf)
        pix_feat = lookup_pixel_features(fm, pixels, size, lookup)
        if point_labels is not None:
            labels = np.asarray(point_labels, dtype=np.int64)[pts]
            logits = lookup_pixel_features(FeatureMap(cams.data), pixels, size, "nearest")
            losses[k] = pointly_supervised_loss(logits, labels)
        else:
            labels = lookup_pixel_labels(np.argmax(cams.data, axis=0), pixels, size)
        regions: dict[int, np.ndarray] = {}
        for y in np.unique(labels):
            gate = build_gate(cams, int(y), tau)
            regions[int(y)] = gather_region_feature(gate, fm, activation).vector
        region_rows = np.stack([regions[int(y)] for y in labels])
        fused[sel] = np.concatenate([point_features[pts], pix_feat, region_rows], axis=1)
    return fused, losses
