"""Point-to-pixel alignment with ego-motion compensation.

Points are captured by the LiDAR at time t1 and expressed in world
coordinates.  Each camera k captures its image at its own time t2.  The
point is moved into the ego frame at t1, carried to the ego frame at t2
through the first-frame poses of the sequence, and finally projected with
the camera's extrinsic and intrinsic matrices::

    [u, v, 1]^T ~ I_k E_k inv(P_t2) P_t1 W_t1 [x, 1]^T

where ``P_t`` maps ego@t to ego@t0 and ``W_t1`` maps world to ego@t1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateTransformError, DimensionError

ORTHONORMAL_TOL = 1e-6
# Points closer than this to the camera plane are culled.
MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Transform4:
    """Rigid 4x4 homogeneous transform (translation in meters)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (4, 4):
            raise DegenerateTransformError(f"expected a 4x4 matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DegenerateTransformError("transform has non-finite entries")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise DegenerateTransformError(f"last row must be [0,0,0,1], got {m[3]}")
        rot = m[:3, :3]
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise DegenerateTransformError(
                f"rotation block is not orthonormal (max |R^T R - I| = {err:.3g})"
            )
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Transform4":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation) -> "Transform4":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def translation(cls, x: float, y: float, z: float) -> "Transform4":
        return cls.from_rt(np.eye(3), [x, y, z])

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Transform4":
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls.from_rt(rot, translation)

    @property
    def rotation(self) -> np.ndarray:
        return self.m[:3, :3]

    @property
    def translation_vector(self) -> np.ndarray:
        return self.m[:3, 3]

    def inverse(self) -> "Transform4":
        rt = self.rotation.T
        return Transform4.from_rt(rt, -rt @ self.translation_vector)

    def __matmul__(self, other: "Transform4") -> "Transform4":
        return Transform4(self.m @ other.m)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation_vector

    def __eq__(self, other):
        return isinstance(other, Transform4) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: ``intrinsic`` in pixels, ``extrinsic`` maps ego to camera."""

    intrinsic: np.ndarray
    extrinsic: Transform4
    width: int
    height: int
    capture_time: float = 0.0

    def __post_init__(self):
        k = np.array(self.intrinsic, dtype=np.float64)
        if k.shape != (3, 3):
            raise DimensionError(f"intrinsic must be 3x3, got {k.shape}")
        if k[2, 2] != 1.0 or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ConfigurationError("intrinsic needs K[2,2] = 1 and positive focal lengths")
        if not (0 <= k[0, 2] < self.width and 0 <= k[1, 2] < self.height):
            raise ConfigurationError("principal point lies outside the image")
        k.setflags(write=False)
        object.__setattr__(self, "intrinsic", k)


@dataclass(frozen=True)
class LidarFrame:
    positions: np.ndarray
    features: np.ndarray
    capture_time: float = 0.0
    pose_to_first: Transform4 = field(default_factory=Transform4.identity)
    world_to_ego: Transform4 = field(default_factory=Transform4.identity)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        feat = np.asarray(self.features, dtype=np.float64)
        if feat.ndim == 1:
            feat = feat.reshape(len(pos), -1) if len(pos) else feat.reshape(0, 0)
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise DimensionError(
                f"positions ({pos.shape[0]}) and features ({feat.shape}) disagree on N"
            )
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(feat))):
            raise DimensionError("frame contains non-finite values")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    def __len__(self):
        return self.positions.shape[0]

    def ego_positions(self) -> np.ndarray:
        """Positions in the ego frame at LiDAR capture time."""
        return self.world_to_ego.apply(self.positions)


@dataclass(frozen=True)
class Projection:
    """Points of one camera that survived the frustum cull."""

    point_index: np.ndarray
    pixels: np.ndarray
    depth: np.ndarray
    n_culled: int


@dataclass(frozen=True)
class PointPixelMap:
    point_index: np.ndarray
    camera_index: np.ndarray
    pixels: np.ndarray
    depth: np.ndarray

    def __len__(self):
        return len(self.point_index)

    @classmethod
    def empty(cls) -> "PointPixelMap":
        return cls(
            np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros(0)
        )

    def for_camera(self, k: int) -> Projection:
        sel = self.camera_index == k
        return Projection(self.point_index[sel], self.pixels[sel], self.depth[sel], 0)


def relative_motion(pose_t1_to_first: Transform4, pose_t2_to_first: Transform4) -> Transform4:
    """Ego@t1 -> ego@t2, assembled from the two first-frame poses."""
    if pose_t1_to_first == pose_t2_to_first:
        return Transform4.identity()
    if abs(np.linalg.det(pose_t2_to_first.m)) < 1e-12:
        raise DegenerateTransformError("pose at t2 is singular")
    return Transform4(np.linalg.inv(pose_t2_to_first.m) @ pose_t1_to_first.m)


def ego_compensate(
    frame: LidarFrame, pose_t2_to_first: Transform4, compensate: bool = True
) -> np.ndarray:
    """Move world-frame LiDAR points into the ego frame at camera time t2.

    With ``compensate=False`` the t1 -> t2 step is skipped, which is what a
    plain point-to-pixel projection does.  When both poses are identical the
    motion step is exactly the identity, so the result is bit-identical to
    the uncompensated path.
    """
    if not compensate or frame.pose_to_first == pose_t2_to_first:
        return frame.ego_positions()
    motion = relative_motion(frame.pose_to_first, pose_t2_to_first)
    return (motion @ frame.world_to_ego).apply(frame.positions)


def in_image(pixels: np.ndarray, depth: np.ndarray, width: int, height: int) -> np.ndarray:
    u, v = pixels[:, 0], pixels[:, 1]
    return (depth > MIN_DEPTH) & (u >= 0) & (u < width) & (v >= 0) & (v < height)


def project_to_image(positions_t2: np.ndarray, cam: CameraModel) -> Projection:
    """Project ego-frame points into one camera and cull outside the frustum.

    Pixels are kept unrounded inside the half-open box [0, width) x [0, height).
    """
    positions_t2 = np.asarray(positions_t2, dtype=np.float64).reshape(-1, 3)
    cam_pts = cam.extrinsic.apply(positions_t2)
    depth = cam_pts[:, 2]
    hom = cam_pts @ cam.intrinsic.T
    with np.errstate(divide="ignore", invalid="ignore"):
        pixels = hom[:, :2] / hom[:, 2:3]
    keep = in_image(pixels, depth, cam.width, cam.height)
    idx = np.flatnonzero(keep)
    return Projection(idx, pixels[keep], depth[keep], int(len(keep) - len(idx)))


def projection_matrix(
    frame: LidarFrame, cam: CameraModel, pose_t2_to_first: Transform4
) -> np.ndarray:
    """The full world -> pixel chain collapsed into a single 3x4 matrix."""
    motion = relative_motion(frame.pose_to_first, pose_t2_to_first)
    chain = cam.extrinsic.m @ motion.m @ frame.world_to_ego.m
    return cam.intrinsic @ chain[:3]


def project_with_matrix(matrix: np.ndarray, positions: np.ndarray):
    """Apply a 3x4 projection matrix; returns (pixels, depth)."""
    hom = np.asarray(positions, dtype=np.float64) @ matrix[:, :3].T + matrix[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        return hom[:, :2] / hom[:, 2:3], hom[:, 2]


def build_point_pixel_map(
    frame: LidarFrame,
    rig: list[CameraModel],
    poses_t2_to_first: list[Transform4],
    compensate: bool = True,
) -> PointPixelMap:
    """Union of per-camera projections, ordered by camera then point index."""
    if not rig:
        raise ConfigurationError("camera rig is empty")
    if len(rig) != len(poses_t2_to_first):
        raise ConfigurationError(
            f"{len(rig)} cameras but {len(poses_t2_to_first)} poses supplied"
        )
    if len(frame) == 0:
        return PointPixelMap.empty()
    pidx, cidx, pix, dep = [], [], [], []
    for k, (cam, pose) in enumerate(zip(rig, poses_t2_to_first)):
        proj = project_to_image(ego_compensate(frame, pose, compensate), cam)
        pidx.append(proj.point_index)
        cidx.append(np.full(len(proj.point_index), k, dtype=np.int64))
        pix.append(proj.pixels)
        dep.append(proj.depth)
    return PointPixelMap(
        np.concatenate(pidx).astype(np.int64),
        np.concatenate(cidx),
        np.concatenate(pix).reshape(-1, 2),
        np.concatenate(dep),
    )


def pixel_map_mismatch(pm: PointPixelMap, truth: PointPixelMap, tol: float = 0.5) -> int:
    """Count (point, camera) pairs that are missing on one side or land > tol px apart."""
    a = {(int(p), int(c)): px for p, c, px in zip(pm.point_index, pm.camera_index, pm.pixels)}
    b = {(int(p), int(c)): px for p, c, px in zip(truth.point_index, truth.camera_index, truth.pixels)}
    count = len(a.keys() ^ b.keys())
    for key in a.keys() & b.keys():
        if np.hypot(*(a[key] - b[key])) > tol:
            count += 1
    return count


def look_at_camera(
    yaw: float,
    width: int,
    height: int,
    focal: float,
    mount=(0.0, 0.0, 1.5),
    capture_time: float = 0.0,
) -> CameraModel:
    """Camera on the ego vehicle looking horizontally along heading ``yaw``.

    Camera axes: x right, y down, z forward.
    """
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])
    ext = Transform4.from_rt(rot, -rot @ np.asarray(mount, dtype=np.float64))
    k = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    return CameraModel(k, ext, width, height, capture_time)
