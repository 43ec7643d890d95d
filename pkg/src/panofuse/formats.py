"""On-disk formats.

All binary containers are little-endian and start with a 4-byte magic:

``LCPK``  point cloud: u32 N, u32 C, N x 3 float32 positions, N x C float32 features
``LCFT``  dense tensor: u32 rank, rank x u32 dims, float32 payload (row-major)
``LCVG``  sparse cylinder grid: u32 radial/angular/z bins, f64 r_min, r_max,
          z_min, z_max, u32 C, u32 K, then K records of
          (3 x u32 index, u32 count, C x float32 feature)
``LCPL``  panoptic labels: u32 N, then N x 2 int32 (semantic, instance)

Calibration and pose files are JSON.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraModel, Transform4
from .postproc import PanopticLabeling
from .voxel import CylinderGridSpec, VoxelGrid


def f32(x) -> np.ndarray:
    """Round to float32 precision and back; what a value looks like after a dump."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if buf[:4] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {buf[:4]!r}")


def _payload(buf: bytes, offset: int, dtype, count: int, path) -> np.ndarray:
    need = offset + np.dtype(dtype).itemsize * count
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes, file has {len(buf)}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset)


def write_points(path, positions, features) -> None:
    positions = np.asarray(positions, dtype="<f4").reshape(-1, 3)
    features = np.asarray(features, dtype="<f4").reshape(len(positions), -1)
    with open(path, "wb") as fh:
        fh.write(b"LCPK" + struct.pack("<II", len(positions), features.shape[1]))
        fh.write(positions.tobytes())
        fh.write(features.tobytes())


def read_points(path):
    buf = _read(path)
    _check_magic(buf, b"LCPK", path)
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated header")
    n, c = struct.unpack_from("<II", buf, 4)
    data = _payload(buf, 12, "<f4", n * 3 + n * c, path)
    pos = data[: n * 3].reshape(n, 3).astype(np.float64)
    feat = data[n * 3 :].reshape(n, c).astype(np.float64)
    return pos, feat


def write_tensor(path, array) -> None:
    arr = np.asarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"LCFT" + struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_tensor(path) -> np.ndarray:
    buf = _read(path)
    _check_magic(buf, b"LCFT", path)
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + 4 * rank:
        raise FormatError(f"{path}: truncated shape")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims)) if rank else 1
    return _payload(buf, 8 + 4 * rank, "<f4", count, path).reshape(dims).astype(np.float64)


_LCVG_HEAD = struct.Struct("<4s3I4d2I")


def _cell_dtype(c: int) -> np.dtype:
    return np.dtype([("index", "<u4", (3,)), ("count", "<u4"), ("feature", "<f4", (c,))])


def write_voxels(path, grid: VoxelGrid) -> None:
    s = grid.spec
    c, k = grid.width, len(grid)
    rec = np.zeros(k, dtype=_cell_dtype(c))
    rec["index"] = grid.indices
    rec["count"] = grid.counts
    rec["feature"] = grid.features
    with open(path, "wb") as fh:
        fh.write(
            _LCVG_HEAD.pack(
                b"LCVG", s.radial_bins, s.angular_bins, s.z_bins,
                *s.radial_range, *s.z_range, c, k,
            )
        )
        fh.write(rec.tobytes())


def read_voxels(path) -> VoxelGrid:
    buf = _read(path)
    _check_magic(buf, b"LCVG", path)
    if len(buf) < _LCVG_HEAD.size:
        raise FormatError(f"{path}: truncated header")
    _, nr, na, nz, r0, r1, z0, z1, c, k = _LCVG_HEAD.unpack_from(buf)
    spec = CylinderGridSpec(nr, na, nz, (r0, r1), (z0, z1))
    dt = _cell_dtype(c)
    if len(buf) != _LCVG_HEAD.size + dt.itemsize * k:
        raise FormatError(f"{path}: cell records do not match header")
    rec = np.frombuffer(buf, dtype=dt, count=k, offset=_LCVG_HEAD.size)
    return VoxelGrid(
        spec,
        rec["index"].astype(np.int64).reshape(k, 3),
        rec["feature"].astype(np.float64).reshape(k, c),
        rec["count"].astype(np.int64),
    )


def write_labels(path, labeling: PanopticLabeling) -> None:
    data = np.stack([labeling.semantic, labeling.instance], axis=1).astype("<i4")
    with open(path, "wb") as fh:
        fh.write(b"LCPL" + struct.pack("<I", len(data)))
        fh.write(data.tobytes())


def read_labels(path) -> PanopticLabeling:
    buf = _read(path)
    _check_magic(buf, b"LCPL", path)
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", buf, 4)
    data = _payload(buf, 8, "<i4", 2 * n, path).reshape(n, 2).astype(np.int64)
    return PanopticLabeling(data[:, 0], data[:, 1])


def time_key(t: float) -> str:
    return f"{t:.6f}"


def write_calibration(path, rig: list[CameraModel], lidar_time: float, world_to_ego: Transform4) -> None:
    doc = {
        "lidar": {"capture_time": lidar_time, "world_to_ego": world_to_ego.m.tolist()},
        "cameras": [
            {
                "intrinsic": cam.intrinsic.tolist(),
                "extrinsic": cam.extrinsic.m.tolist(),
                "width": cam.width,
                "height": cam.height,
                "capture_time": cam.capture_time,
            }
            for cam in rig
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_calibration(path):
    """Returns (rig, lidar_time, world_to_ego)."""
    doc = _load_json(path)
    try:
        rig = [
            CameraModel(
                np.array(c["intrinsic"], dtype=np.float64),
                Transform4(np.array(c["extrinsic"], dtype=np.float64)),
                int(c["width"]),
                int(c["height"]),
                float(c["capture_time"]),
            )
            for c in doc["cameras"]
        ]
        lidar = doc["lidar"]
        return rig, float(lidar["capture_time"]), Transform4(np.array(lidar["world_to_ego"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing field {exc}") from exc


def write_poses(path, poses: dict[float, Transform4]) -> None:
    doc = {"poses": {time_key(t): p.m.tolist() for t, p in sorted(poses.items())}}
    Path(path).write_text(json.dumps(doc, indent=1))


def read_poses(path) -> dict[str, Transform4]:
    doc = _load_json(path)
    try:
        return {k: Transform4(np.array(v, dtype=np.float64)) for k, v in doc["poses"].items()}
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing field {exc}") from exc


def pose_at(poses: dict[str, Transform4], t: float) -> Transform4:
    try:
        return poses[time_key(t)]
    except KeyError:
        raise FormatError(f"no pose for timestamp {time_key(t)}") from None
