"""Cylindrical (radius, azimuth, height) voxel partition and scatter pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

TWO_PI = 2.0 * np.pi
DEFAULT_WIDTH = 16


@dataclass(frozen=True)
class CylinderGridSpec:
    radial_bins: int = 480
    angular_bins: int = 360
    z_bins: int = 32
    radial_range: tuple[float, float] = (0.0, 100.0)
    z_range: tuple[float, float] = (-5.0, 3.0)

    def __post_init__(self):
        if min(self.radial_bins, self.angular_bins, self.z_bins) < 1:
            raise ConfigurationError("every axis needs at least one bin")
        r0, r1 = self.radial_range
        z0, z1 = self.z_range
        if not (0 <= r0 < r1):
            raise ConfigurationError(f"bad radial range {self.radial_range}")
        if not z0 < z1:
            raise ConfigurationError(f"bad z range {self.z_range}")
        object.__setattr__(self, "radial_range", (float(r0), float(r1)))
        object.__setattr__(self, "z_range", (float(z0), float(z1)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.radial_bins, self.angular_bins, self.z_bins)

    @property
    def cell_size(self) -> tuple[float, float, float]:
        r0, r1 = self.radial_range
        z0, z1 = self.z_range
        return ((r1 - r0) / self.radial_bins, TWO_PI / self.angular_bins, (z1 - z0) / self.z_bins)

    def cell_center(self, index) -> np.ndarray:
        """Polar (r, theta, z) centre of voxel(s) with integer ``index``."""
        idx = np.asarray(index, dtype=np.float64)
        dr, dt, dz = self.cell_size
        return np.stack(
            [
                self.radial_range[0] + (idx[..., 0] + 0.5) * dr,
                (idx[..., 1] + 0.5) * dt,
                self.z_range[0] + (idx[..., 2] + 0.5) * dz,
            ],
            axis=-1,
        )

    def linear(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return (idx[..., 0] * self.angular_bins + idx[..., 1]) * self.z_bins + idx[..., 2]

    def unlinear(self, lin: np.ndarray) -> np.ndarray:
        lin = np.asarray(lin, dtype=np.int64)
        iz = lin % self.z_bins
        rest = lin // self.z_bins
        return np.stack([rest // self.angular_bins, rest % self.angular_bins, iz], axis=-1)


PRESETS = {
    "nuscenes-100m": CylinderGridSpec(480, 360, 32, (0.0, 100.0), (-5.0, 3.0)),
    "kitti-60m": CylinderGridSpec(480, 360, 32, (0.0, 60.0), (-5.0, 3.0)),
}


def resolve_grid(name: str, **custom) -> CylinderGridSpec:
    if name == "custom":
        return CylinderGridSpec(**custom)
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown grid preset {name!r}") from None


def to_polar(positions: np.ndarray) -> np.ndarray:
    """(x, y, z) -> (r, theta in [0, 2pi), z)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    r = np.hypot(positions[:, 0], positions[:, 1])
    theta = np.arctan2(positions[:, 1], positions[:, 0])
    theta = np.where(theta < 0, theta + TWO_PI, theta)
    # theta + 2pi can round up to exactly 2pi
    theta = np.where(theta >= TWO_PI, 0.0, theta)
    return np.stack([r, theta, positions[:, 2]], axis=1)


def from_polar(polar: np.ndarray) -> np.ndarray:
    polar = np.asarray(polar, dtype=np.float64).reshape(-1, 3)
    r, t, z = polar.T
    return np.stack([r * np.cos(t), r * np.sin(t), z], axis=1)


def voxel_indices(positions: np.ndarray, spec: CylinderGridSpec):
    """Vectorised binning; returns ((N, 3) int64 indices, (N,) in-range mask).

    Out-of-range rows carry index -1.  Ranges are half-open: [min, max).
    """
    polar = to_polar(positions)
    r0, r1 = spec.radial_range
    z0, z1 = spec.z_range
    r, t, z = polar.T
    valid = (r >= r0) & (r < r1) & (z >= z0) & (z < z1)
    ir = np.floor((r - r0) / (r1 - r0) * spec.radial_bins)
    it = np.floor(t / TWO_PI * spec.angular_bins)
    iz = np.floor((z - z0) / (z1 - z0) * spec.z_bins)
    idx = np.stack(
        [
            np.clip(ir, 0, spec.radial_bins - 1),
            np.clip(it, 0, spec.angular_bins - 1),
            np.clip(iz, 0, spec.z_bins - 1),
        ],
        axis=1,
    ).astype(np.int64)
    idx[~valid] = -1
    return idx, valid


def voxel_index(position, spec: CylinderGridSpec):
    """Index triple of one point, or None when it falls outside the volume."""
    idx, valid = voxel_indices(np.asarray(position, dtype=np.float64).reshape(1, 3), spec)
    return tuple(int(i) for i in idx[0]) if valid[0] else None


@dataclass(frozen=True)
class VoxelGrid:
    """Sparse voxel features; cells sorted by linear index."""

    spec: CylinderGridSpec
    indices: np.ndarray
    features: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @classmethod
    def empty(cls, spec: CylinderGridSpec, width: int) -> "VoxelGrid":
        return cls(spec, np.zeros((0, 3), np.int64), np.zeros((0, width)), np.zeros(0, np.int64))

    def lookup(self) -> dict[int, int]:
        return {int(k): i for i, k in enumerate(self.spec.linear(self.indices))}

    def as_dict(self) -> dict[tuple[int, int, int], np.ndarray]:
        return {tuple(int(v) for v in i): f for i, f in zip(self.indices, self.features)}

    def equals(self, other: "VoxelGrid") -> bool:
        """Bit-exact comparison."""
        return (
            self.spec == other.spec
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.counts, other.counts)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


def _canonical_order(lin: np.ndarray, positions: np.ndarray, features: np.ndarray) -> np.ndarray:
    # Sort on (voxel, position, feature) content so that the accumulation order
    # never depends on the order points arrived in.
    keys = [features[:, j] for j in range(features.shape[1] - 1, -1, -1)]
    keys += [positions[:, j] for j in (2, 1, 0)]
    keys.append(lin)
    return np.lexsort(keys)


def scatter_pool(positions, features, spec: CylinderGridSpec, pool: str = "mean") -> VoxelGrid:
    """Pool per-point features into the voxels they fall in.

    Multiple rows at the same position (one point seen by several cameras)
    are pooled as separate members.  Out-of-range points are dropped.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != positions.shape[0]:
        raise DimensionError(f"features {features.shape} do not match {positions.shape[0]} points")
    if pool not in ("mean", "max"):
        raise ConfigurationError(f"unknown pooling {pool!r}")
    width = features.shape[1]
    idx, valid = voxel_indices(positions, spec)
    if not valid.any():
        return VoxelGrid.empty(spec, width)
    positions, features, idx = positions[valid], features[valid], idx[valid]
    lin = spec.linear(idx)
    order = _canonical_order(lin, positions, features)
    lin, feats = lin[order], features[order]
    starts = np.flatnonzero(np.r_[True, lin[1:] != lin[:-1]])
    counts = np.diff(np.r_[starts, len(lin)])
    if pool == "mean":
        pooled = np.add.reduceat(feats, starts, axis=0) / counts[:, None]
    else:
        pooled = np.maximum.reduceat(feats, starts, axis=0)
    return VoxelGrid(spec, spec.unlinear(lin[starts]), pooled, counts.astype(np.int64))


def identity_padded(in_dim: int, out_dim: int) -> np.ndarray:
    """(out_dim, in_dim) map copying the first min(in, out) channels, zero elsewhere."""
    m = np.zeros((out_dim, in_dim))
    n = min(in_dim, out_dim)
    m[np.arange(n), np.arange(n)] = 1.0
    return m


def block_mean(in_dim: int, out_dim: int, blocks: int = 3) -> np.ndarray:
    """(out_dim, in_dim) map averaging ``blocks`` equal-width slices, then identity-padding.

    Used to compress [point | pixel | region] rows of width 3C to the voxel width.
    """
    if in_dim % blocks:
        raise DimensionError(f"{in_dim} channels do not split into {blocks} blocks")
    c = in_dim // blocks
    avg = np.hstack([np.eye(c) / blocks] * blocks)
    return identity_padded(c, out_dim) @ avg


def encode_base_voxels(positions, features, spec: CylinderGridSpec, width: int = DEFAULT_WIDTH) -> VoxelGrid:
    """Fixed stand-in for a learned cylindrical encoder.

    Each voxel carries [mean raw feature | mean polar offset (dr, dtheta, dz)
    of its members from the voxel centre], mapped to ``width`` channels with
    :func:`identity_padded`.  ``positions`` are in the LiDAR ego frame.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(positions):
        raise DimensionError(f"features {features.shape} do not match {len(positions)} points")
    c = features.shape[1]
    if len(positions) == 0:
        return VoxelGrid.empty(spec, width)
    idx, valid = voxel_indices(positions, spec)
    offsets = np.zeros((len(positions), 3))
    offsets[valid] = to_polar(positions[valid]) - spec.cell_center(idx[valid])
    raw = scatter_pool(positions, np.hstack([features, offsets]), spec, "mean")
    proj = identity_padded(c + 3, width)
    return VoxelGrid(raw.spec, raw.indices, raw.features @ proj.T, raw.counts)


def rotate_angular(grid: VoxelGrid, steps: int = 1) -> VoxelGrid:
    """Shift every cell by ``steps`` azimuth bins (with wraparound) and re-sort."""
    idx = grid.indices.copy()
    idx[:, 1] = (idx[:, 1] + steps) % grid.spec.angular_bins
    order = np.argsort(grid.spec.linear(idx), kind="stable")
    return VoxelGrid(grid.spec, idx[order], grid.features[order], grid.counts[order])
