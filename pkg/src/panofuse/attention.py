"""Neighbourhood attention from image-fused voxels into base voxels.

Every occupied base voxel queries the (up to) 27 image-fused voxels around
it with single-head scaled dot-product attention, and the result is added
back to the base feature as a residual.  Voxels with no fused neighbour keep
their base feature unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConfigurationError, DimensionError
from .voxel import CylinderGridSpec, VoxelGrid

OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)


@dataclass(frozen=True)
class NeighborSet:
    center: tuple[int, int, int]
    members: np.ndarray


def neighbor_indices(center, spec: CylinderGridSpec) -> NeighborSet:
    """Candidate neighbours of ``center`` in offset order.

    The azimuth axis wraps; radius and height do not (out-of-range offsets are
    dropped).  Duplicates produced by wrapping on tiny grids are removed.
    """
    c = np.asarray(center, dtype=np.int64)
    cand = c + OFFSETS
    cand[:, 1] %= spec.angular_bins
    ok = (
        (cand[:, 0] >= 0)
        & (cand[:, 0] < spec.radial_bins)
        & (cand[:, 2] >= 0)
        & (cand[:, 2] < spec.z_bins)
    )
    cand = cand[ok]
    _, first = np.unique(spec.linear(cand), return_index=True)
    return NeighborSet(tuple(int(v) for v in c), cand[np.sort(first)])


def attention_weights(query, keys) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    keys = np.asarray(keys, dtype=np.float64).reshape(-1, query.size)
    logits = keys @ query / np.sqrt(query.size)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def local_attention(query, keys, values) -> np.ndarray:
    """softmax(q K^T / sqrt(C)) V for a single query."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 1:
        raise DimensionError("attention needs at least one key")
    return attention_weights(query, keys) @ values


def _gather_neighbors(base: VoxelGrid, fused: VoxelGrid):
    """(n_base, 27) row indices into ``fused``; -1 where absent.

    Slots follow offset order, so a rotated grid sees identical slot layouts.
    Duplicate slots from wraparound on tiny grids are blanked.
    """
    spec = base.spec
    fused_lin = spec.linear(fused.indices)
    order = np.argsort(fused_lin, kind="stable")
    sorted_lin = fused_lin[order]
    cand = base.indices[:, None, :] + OFFSETS[None]
    cand[..., 1] %= spec.angular_bins
    inside = (
        (cand[..., 0] >= 0)
        & (cand[..., 0] < spec.radial_bins)
        & (cand[..., 2] >= 0)
        & (cand[..., 2] < spec.z_bins)
    )
    lin = spec.linear(cand)
    pos = np.clip(np.searchsorted(sorted_lin, lin), 0, len(sorted_lin) - 1)
    hit = inside & (sorted_lin[pos] == lin)
    rows = np.where(hit, order[pos], -1)
    if spec.angular_bins < 3:
        for i in range(len(rows)):
            seen = set()
            for j in range(rows.shape[1]):
                if rows[i, j] >= 0:
                    if rows[i, j] in seen:
                        rows[i, j] = -1
                    else:
                        seen.add(rows[i, j])
    return rows


def _project(x: np.ndarray, w) -> np.ndarray:
    return x if w is None else x @ np.asarray(w, dtype=np.float64).T


def propagate(base: VoxelGrid, fused: VoxelGrid, projections=None) -> VoxelGrid:
    """Residual neighbourhood attention: out = Att(base, fused, fused) + base.

    ``projections`` optionally supplies (W_q, W_k, W_v), each C x C, applied
    to queries, keys and values.  The kernel is written with explicit
    per-channel and per-slot accumulation so that every output cell depends
    only on its own inputs, never on where the cell sits in the batch.
    """
    if base.spec != fused.spec:
        raise ConfigurationError("base and fused grids use different cylinder specs")
    if len(fused) and base.width != fused.width:
        raise ConfigurationError(f"channel widths differ: {base.width} vs {fused.width}")
    if len(base) == 0 or len(fused) == 0:
        return VoxelGrid(base.spec, base.indices.copy(), base.features.copy(), base.counts.copy())

    wq, wk, wv = projections if projections is not None else (None, None, None)
    c = base.width
    rows = _gather_neighbors(base, fused)
    present = rows >= 0
    has_any = present.any(axis=1)

    q = _project(base.features, wq)
    k_all = _project(fused.features, wk)
    v_all = _project(fused.features, wv)
    safe = np.where(present, rows, 0)
    keys = k_all[safe]
    vals = v_all[safe]

    scale = np.sqrt(c)
    logits = np.zeros(rows.shape)
    for ch in range(c):
        logits += keys[:, :, ch] * q[:, None, ch]
    logits = np.where(present, logits / scale, -np.inf)
    top = np.where(has_any, logits.max(axis=1), 0.0)
    expw = np.where(present, np.exp(logits - top[:, None]), 0.0)
    total = np.zeros(len(rows))
    for s in range(rows.shape[1]):
        total += expw[:, s]
    total = np.where(has_any, total, 1.0)
    weights = expw / total[:, None]
    att = np.zeros((len(rows), c))
    for s in range(rows.shape[1]):
        att += weights[:, s, None] * vals[:, s, :]
    out = np.where(has_any[:, None], att + base.features, base.features)
    return VoxelGrid(base.spec, base.indices.copy(), out, base.counts.copy())


def propagate_weights(base: VoxelGrid, fused: VoxelGrid) -> list[np.ndarray]:
    """Per-base-cell attention weights over present neighbours (diagnostic)."""
    rows = _gather_neighbors(base, fused)
    out = []
    for i, r in enumerate(rows):
        r = r[r >= 0]
        out.append(attention_weights(base.features[i], fused.features[r]) if len(r) else np.zeros(0))
    return out
