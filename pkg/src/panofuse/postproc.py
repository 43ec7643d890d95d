"""Turn BEV head outputs into per-point semantic + instance labels.

Centres are picked from the BEV heatmap with windowed non-maximum
suppression; foreground voxels (thing class and FOG probability above the
threshold) are projected to BEV, shifted by their predicted offsets and
attached to the nearest centre.  Points inherit the instance of their voxel
column, and each instance's class is settled by majority vote.

BEV coordinates are grid units: cell (h, w) sits at (h, w), offsets are in
cells, and distances are Euclidean in that index space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import DimensionError

NMS_KERNEL = 5
NMS_THRESHOLD = 0.1
FOG_THRESHOLD = 0.5


@dataclass(frozen=True)
class BevMaps:
    heatmap: np.ndarray
    offsets: np.ndarray
    semantic: np.ndarray
    fog: np.ndarray

    def __post_init__(self):
        heat = np.asarray(self.heatmap, dtype=np.float64)
        off = np.asarray(self.offsets, dtype=np.float64)
        sem = np.asarray(self.semantic)
        fog = np.asarray(self.fog, dtype=np.float32)
        if sem.ndim == 4:
            sem = np.argmax(sem, axis=0)
        # dense H x W x Z grids are large; keep them compact
        sem = sem.astype(np.int32, copy=False)
        h, w = heat.shape
        if off.shape != (h, w, 2):
            raise DimensionError(f"offsets {off.shape} do not match heatmap {heat.shape}")
        if sem.shape[:2] != (h, w) or sem.ndim != 3 or fog.shape != sem.shape:
            raise DimensionError(f"semantic {sem.shape} / fog {fog.shape} do not match heatmap {heat.shape}")
        object.__setattr__(self, "heatmap", heat)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "fog", fog)


@dataclass(frozen=True)
class PanopticLabeling:
    """Per-point class and instance id (0 = no instance)."""

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        sem = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        inst = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        if sem.shape != inst.shape:
            raise DimensionError("semantic and instance arrays differ in length")
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", inst)

    def __len__(self):
        return len(self.semantic)

    @property
    def n_instances(self) -> int:
        return int(self.instance.max()) if len(self.instance) else 0

    def equals(self, other: "PanopticLabeling") -> bool:
        return np.array_equal(self.semantic, other.semantic) and np.array_equal(self.instance, other.instance)


def nms_centers(heatmap, kernel: int = NMS_KERNEL, threshold: float = NMS_THRESHOLD):
    """Window-maximum centre picking.

    A cell is kept when its value is >= ``threshold`` and is the maximum of
    its ``kernel`` x ``kernel`` window; among equal maxima in a window only
    the lexicographically smallest cell survives.  Returns ``[((h, w), score)]``
    sorted by descending score, then by cell.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    heat = np.asarray(heatmap, dtype=np.float64)
    r = kernel // 2
    maxf = maximum_filter(heat, size=kernel, mode="constant", cval=-np.inf)
    keep = (heat >= threshold) & (heat == maxf)
    padded = np.pad(heat, r, mode="constant", constant_values=-np.inf)
    h, w = heat.shape
    for dy in range(-r, 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx >= 0:
                break
            shifted = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            keep &= shifted != heat
    cells = np.argwhere(keep)
    scores = heat[keep]
    order = np.lexsort((cells[:, 1], cells[:, 0], -scores))
    return [((int(cells[i, 0]), int(cells[i, 1])), float(scores[i])) for i in order]


def apply_fog(semantic, fog, thing_classes, fog_threshold: float = FOG_THRESHOLD) -> np.ndarray:
    semantic = np.asarray(semantic)
    fog = np.asarray(fog)
    if semantic.shape != fog.shape:
        raise DimensionError(f"semantic {semantic.shape} and fog {fog.shape} differ")
    return np.isin(semantic, list(thing_classes)) & (fog >= fog_threshold)


def _sorted_centers(centers):
    return sorted(centers, key=lambda c: (-c[1], c[0][0], c[0][1]))


def shift_and_cluster(cells, offsets, centers) -> np.ndarray:
    """Instance id (1-based rank of the nearest centre) for each BEV cell.

    Equal distances go to the higher-scoring centre, then the smaller cell.
    Returns zeros when there are no centres.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if len(centers) == 0 or len(cells) == 0:
        return np.zeros(len(cells), dtype=np.int64)
    ordered = _sorted_centers(centers)
    cc = np.array([c[0] for c in ordered], dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    shifted = cells + offsets[cells[:, 0], cells[:, 1]]
    d2 = ((shifted[:, None, :] - cc[None]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1).astype(np.int64) + 1


def bev_instances(foreground, offsets, centers) -> np.ndarray:
    """H x W instance map from a voxel foreground mask (any height counts)."""
    fg_bev = np.asarray(foreground).any(axis=2)
    cells = np.argwhere(fg_bev)
    out = np.zeros(fg_bev.shape, dtype=np.int64)
    out[cells[:, 0], cells[:, 1]] = shift_and_cluster(cells, offsets, centers)
    return out


def majority_vote(semantic: np.ndarray, instance: np.ndarray) -> np.ndarray:
    """Replace each instance's classes by its most frequent one (ties -> smaller class)."""
    out = semantic.copy()
    for i in np.unique(instance[instance > 0]):
        members = instance == i
        out[members] = np.argmax(np.bincount(semantic[members]))
    return out


def assign_panoptic(
    point_voxels,
    point_semantic,
    cell_instance,
    foreground,
    thing_classes,
    vote: bool = True,
) -> PanopticLabeling:
    """Per-point labels from voxel-level foreground and BEV instance maps.

    Points outside the grid (index -1) get no instance.  Instance ids are
    renumbered to 1..n in order of their original ids.
    """
    point_voxels = np.asarray(point_voxels, dtype=np.int64).reshape(-1, 3)
    semantic = np.asarray(point_semantic, dtype=np.int64).reshape(-1)
    instance = np.zeros(len(semantic), dtype=np.int64)
    valid = (point_voxels >= 0).all(axis=1)
    v = point_voxels[valid]
    fg = np.asarray(foreground)[v[:, 0], v[:, 1], v[:, 2]]
    ids = np.asarray(cell_instance)[v[:, 0], v[:, 1]]
    instance[valid] = np.where(fg, ids, 0)
    instance[~np.isin(semantic, list(thing_classes))] = 0
    if vote:
        semantic = majority_vote(semantic, instance)
    uniq = np.unique(instance[instance > 0])
    remap = np.zeros(int(instance.max()) + 1 if len(instance) else 1, dtype=np.int64)
    remap[uniq] = np.arange(1, len(uniq) + 1)
    return PanopticLabeling(semantic, remap[instance])


def point_semantics(point_voxels, semantic_grid, fill: int = 0) -> np.ndarray:
    point_voxels = np.asarray(point_voxels, dtype=np.int64).reshape(-1, 3)
    out = np.full(len(point_voxels), fill, dtype=np.int64)
    valid = (point_voxels >= 0).all(axis=1)
    v = point_voxels[valid]
    out[valid] = semantic_grid[v[:, 0], v[:, 1], v[:, 2]]
    return out


def postprocess(
    bev: BevMaps,
    point_voxels,
    thing_classes,
    nms_kernel: int = NMS_KERNEL,
    nms_threshold: float = NMS_THRESHOLD,
    fog_threshold: float = FOG_THRESHOLD,
    vote: bool = True,
    use_fog: bool = True,
) -> PanopticLabeling:
    centers = nms_centers(bev.heatmap, nms_kernel, nms_threshold)
    fog = bev.fog if use_fog else np.ones_like(bev.fog)
    fg = apply_fog(bev.semantic, fog, thing_classes, fog_threshold)
    cell_inst = bev_instances(fg, bev.offsets, centers)
    sem = point_semantics(point_voxels, bev.semantic)
    return assign_panoptic(point_voxels, sem, cell_inst, fg, thing_classes, vote)
