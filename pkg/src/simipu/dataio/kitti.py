"""KITTI-format calibration parsing and the raw point binary format.

Calibration files carry `key: floats...` lines; we consume P2 (3x4 camera
projection), R0_rect (3x3 rectification), and Tr_velo_to_cam (3x4 LIDAR to
camera transform) and compose them into a CameraModel so that projecting a
LIDAR point reproduces u*z = P2 @ R0 @ Tr @ x exactly: the P2 translation
column is pre-rotated into the unrectified camera frame and folded into the
extrinsic translation, and R0 is stored as the rectification step.
"""
from __future__ import annotations

import logging

import numpy as np

from ..errors import EmptyCloudError, ParseError
from ..geometry import CameraModel, PointCloud

log = logging.getLogger(__name__)

_REQUIRED = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def parse_kitti_calib(text: str, image_width: int = 1242, image_height: int = 375) -> CameraModel:
    """Build a CameraModel from KITTI calibration file contents.

    Unknown keys are ignored; missing required keys or wrong float counts
    raise ParseError (naming the key / line). Image dimensions are not part
    of the file format, so callers pass them (defaults match the common
    KITTI capture size).
    """
    fields: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in _REQUIRED:
            continue
        try:
            values = np.array([float(tok) for tok in rest.split()])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: non-numeric token in {key}: {exc}") from None
        if values.size != _REQUIRED[key]:
            raise ParseError(
                f"line {lineno}: key {key} expects {_REQUIRED[key]} floats, got {values.size}"
            )
        fields[key] = values
    for key in _REQUIRED:
        if key not in fields:
            raise ParseError(f"missing required calibration key: {key}")

    p2 = fields["P2"].reshape(3, 4)
    r0 = fields["R0_rect"].reshape(3, 3)
    tr = fields["Tr_velo_to_cam"].reshape(3, 4)

    intrinsics = p2[:, :3].copy()
    # x_rect = R0 @ (Tr_R @ x + Tr_t) + K^-1 @ p2[:,3]; fold the last term
    # through R0^-1 so projection stays (extrinsics, then rectification).
    offset = np.linalg.solve(intrinsics, p2[:, 3])
    extrinsic_rotation = tr[:, :3]
    extrinsic_translation = tr[:, 3] + np.linalg.solve(r0, offset)
    return CameraModel(
        intrinsics=intrinsics,
        extrinsic_rotation=extrinsic_rotation,
        extrinsic_translation=extrinsic_translation,
        image_width=image_width,
        image_height=image_height,
        rectification=r0,
    )


def write_kitti_calib(camera: CameraModel) -> str:
    """Serialize a CameraModel back to the calibration text format.

    The inverse of parse_kitti_calib for cameras without a baseline offset:
    P2 = [K | 0], R0_rect = rectification (identity if absent), and
    Tr_velo_to_cam carries the extrinsics.
    """
    p2 = np.hstack([camera.intrinsics, np.zeros((3, 1))])
    r0 = camera.rectification if camera.rectification is not None else np.eye(3)
    tr = np.hstack([camera.extrinsic_rotation, camera.extrinsic_translation[:, None]])

    def row(values):
        return " ".join(f"{v:.17g}" for v in values)

    return (
        f"P2: {row(p2.reshape(-1))}\n"
        f"R0_rect: {row(r0.reshape(-1))}\n"
        f"Tr_velo_to_cam: {row(tr.reshape(-1))}\n"
    )


def load_point_bin(data: bytes) -> PointCloud:
    """Decode little-endian float32 (x, y, z, reflectance) quadruples.

    Rows with non-finite entries are dropped (count goes to the log). An
    empty payload, or one with no finite rows left, raises EmptyCloudError
    so callers can skip the scene explicitly.
    """
    if len(data) % 16:
        raise ParseError(f"point binary length {len(data)} not divisible by 16")
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(raw).all(axis=1)
    dropped = int((~finite).sum())
    if dropped:
        log.warning("load_point_bin: dropped %d non-finite rows", dropped)
    kept = raw[finite]
    if kept.shape[0] == 0:
        raise EmptyCloudError("point binary contains no finite points")
    return PointCloud(kept)


def save_point_bin(cloud: PointCloud) -> bytes:
    """Encode a cloud as the binary quadruple format (reflectance defaults 0)."""
    pts = cloud.points
    if pts.shape[1] >= 4:
        quad = pts[:, :4]
    else:
        quad = np.hstack([pts[:, :3], np.zeros((pts.shape[0], 1))])
    return np.ascontiguousarray(quad.astype("<f4")).tobytes()
