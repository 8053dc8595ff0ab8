"""Similarity transforms, pinhole projection, and bilinear feature sampling.

All functions here are pure: point clouds and transforms are immutable
inputs, and only ``bilinear_sample`` participates in the autodiff graph
(through its feature-map argument; coordinates are plain data).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffcore import DiffArray, accumulate, as_array, record_op
from .errors import ConfigError, EmptyCloudError, NumericError

#: Projection validity cutoff in meters; points closer than this to the
#: camera plane are masked to avoid near-plane blowup.
DEFAULT_Z_MIN = 0.1


@dataclass(frozen=True)
class PointCloud:
    """Raw scene points: an (n, c) matrix with x, y, z in meters in the
    LIDAR frame (columns 0-2) and, when c >= 4, reflectance in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] < 3:
            raise ConfigError(f"point cloud must be (n, c>=3), got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise NumericError("point cloud contains non-finite coordinates")
        if pts.shape[1] >= 4:
            refl = pts[:, 3]
            if refl.size and (refl.min() < -1e-9 or refl.max() > 1 + 1e-9):
                raise NumericError("reflectance column outside [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def locations(self) -> np.ndarray:
        return self.points[:, :3]


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation/translation/scale triple: x -> scale * R @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tr.shape != (3,):
            raise ConfigError(f"transform needs 3x3 rotation and 3-vector, got {rot.shape}, {tr.shape}")
        if np.abs(rot.T @ rot - np.eye(3)).max() >= 1e-9:
            raise ConfigError("rotation is not orthonormal within 1e-9")
        if np.linalg.det(rot) <= 0:
            raise ConfigError("rotation must have positive determinant")
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "scale", float(self.scale))

    def apply_points(self, locations: np.ndarray) -> np.ndarray:
        """Map an (m, 3) location matrix through the transform."""
        return self.scale * (locations @ self.rotation.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        inv_rot = self.rotation.T
        return SimilarityTransform(
            rotation=inv_rot,
            translation=-inv_scale * (inv_rot @ self.translation),
            scale=inv_scale,
        )

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(np.eye(3), np.zeros(3), 1.0)


@dataclass(frozen=True)
class TransformRanges:
    """Sampling ranges for random view transforms.

    Rotation is restricted to yaw about the gravity (z) axis; outdoor LIDAR
    rigs are gravity-aligned, so roll/pitch jitter would create views no real
    second scan could produce.
    """

    yaw: tuple = (-np.pi / 4, np.pi / 4)
    translation: tuple = (-0.5, 0.5)
    scale: tuple = (0.95, 1.05)

    def __post_init__(self):
        for name, (lo, hi) in (("yaw", self.yaw), ("translation", self.translation), ("scale", self.scale)):
            if lo > hi:
                raise ConfigError(f"empty {name} range: [{lo}, {hi}]")
        if self.scale[0] <= 0:
            raise ConfigError(f"scale range must stay positive, got {self.scale}")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus LIDAR-to-camera extrinsics."""

    intrinsics: np.ndarray
    extrinsic_rotation: np.ndarray
    extrinsic_translation: np.ndarray
    image_width: int
    image_height: int
    rectification: Optional[np.ndarray] = None

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        rot = np.asarray(self.extrinsic_rotation, dtype=np.float64)
        tr = np.asarray(self.extrinsic_translation, dtype=np.float64)
        if k.shape != (3, 3) or rot.shape != (3, 3) or tr.shape != (3,):
            raise ConfigError("camera needs 3x3 intrinsics, 3x3 rotation, 3-vector translation")
        if abs(k[1, 0]) > 1e-9 or abs(k[2, 0]) > 1e-9 or abs(k[2, 1]) > 1e-9 or abs(k[2, 2] - 1.0) > 1e-9:
            raise ConfigError("intrinsics must be upper triangular with K[2,2] = 1")
        fx, fy, cx, cy = k[0, 0], k[1, 1], k[0, 2], k[1, 2]
        if fx <= 0 or fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got fx={fx}, fy={fy}")
        if not (0 <= cx < self.image_width and 0 <= cy < self.image_height):
            raise ConfigError(f"principal point ({cx}, {cy}) outside image {self.image_width}x{self.image_height}")
        # Calibration-grade orthonormality only: real rig calibrations carry
        # ~1e-5 rounding, unlike the synthetic transforms above.
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-4:
            raise ConfigError("extrinsic rotation is not orthonormal")
        rect = self.rectification
        if rect is not None:
            rect = np.asarray(rect, dtype=np.float64)
            if rect.shape != (3, 3):
                raise ConfigError(f"rectification must be 3x3, got {rect.shape}")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "extrinsic_rotation", rot)
        object.__setattr__(self, "extrinsic_translation", tr)
        object.__setattr__(self, "rectification", rect)

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])


def apply_transform(cloud: PointCloud, t: SimilarityTransform) -> PointCloud:
    """Map position columns through ``t``; extra columns ride along unchanged."""
    out = cloud.points.copy()
    out[:, :3] = t.apply_points(cloud.points[:, :3])
    return PointCloud(out)


def sample_transform(rng: np.random.Generator, ranges: TransformRanges) -> SimilarityTransform:
    """Draw a random view transform: uniform yaw, per-axis uniform translation,
    uniform scale. Draw order is fixed so a seed pins the transform."""
    yaw = rng.uniform(ranges.yaw[0], ranges.yaw[1]) if ranges.yaw[0] < ranges.yaw[1] else ranges.yaw[0]
    translation = np.array([
        rng.uniform(ranges.translation[0], ranges.translation[1])
        if ranges.translation[0] < ranges.translation[1] else ranges.translation[0]
        for _ in range(3)
    ])
    scale = rng.uniform(ranges.scale[0], ranges.scale[1]) if ranges.scale[0] < ranges.scale[1] else ranges.scale[0]
    c, s = np.cos(yaw), np.sin(yaw)
    rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return SimilarityTransform(rotation=rotation, translation=translation, scale=float(scale))


def project(locations: np.ndarray, camera: CameraModel, z_min: float = DEFAULT_Z_MIN):
    """Project (m, 3) LIDAR-frame locations to pixel coordinates.

    Returns ``(uv, depth, valid)``: uv is (m, 2) in pixels, depth the camera-z
    in meters, and valid marks points in front of the camera (depth > z_min)
    landing inside [0, W) x [0, H). Invalid rows are masked, never dropped.
    """
    locations = np.asarray(locations, dtype=np.float64)
    if locations.ndim != 2 or locations.shape[1] != 3:
        raise ConfigError(f"project expects (m, 3) locations, got {locations.shape}")
    cam = locations @ camera.extrinsic_rotation.T + camera.extrinsic_translation
    if camera.rectification is not None:
        cam = cam @ camera.rectification.T
    depth = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * cam[:, 0] / depth + camera.cx
        v = camera.fy * cam[:, 1] / depth + camera.cy
    uv = np.stack([u, v], axis=1)
    valid = (
        (depth > z_min)
        & np.isfinite(u) & np.isfinite(v)
        & (u >= 0.0) & (u < camera.image_width)
        & (v >= 0.0) & (v < camera.image_height)
    )
    return uv, depth, valid


def fov_filter(cloud: PointCloud, camera: CameraModel, z_min: float = DEFAULT_Z_MIN) -> PointCloud:
    """Keep exactly the rows whose projection is valid, preserving order."""
    _, _, valid = project(cloud.locations, camera, z_min=z_min)
    if not valid.any():
        raise EmptyCloudError("no point projects inside the camera field of view")
    return PointCloud(cloud.points[valid])


def bilinear_sample(feature_map, coords: np.ndarray) -> DiffArray:
    """Sample a (d, H, W) feature map at (m, 2) continuous (x, y) coordinates.

    Cell (row r, col c) is treated as a sample located at (x=c, y=r), so
    integer coordinates return that cell exactly and the blend is linear
    along each axis in between. Coordinates outside the map are clamped to
    the border. Differentiable w.r.t. the feature map only: the gradient
    scatters back with the same four blend weights.
    """
    fmap = as_array(feature_map)
    if fmap.value.ndim != 3 or fmap.value.shape[1] == 0 or fmap.value.shape[2] == 0:
        raise ConfigError(f"feature map must be (d, H, W) and non-empty, got {fmap.value.shape}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ConfigError(f"coords must be (m, 2), got {coords.shape}")
    if not np.isfinite(coords).all():
        raise NumericError("bilinear_sample coordinates must be finite")

    _, height, width = fmap.value.shape
    x = np.clip(coords[:, 0], 0.0, width - 1.0)
    y = np.clip(coords[:, 1], 0.0, height - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy

    v = fmap.value
    value = (
        v[:, y0, x0] * w00 + v[:, y0, x1] * w01 + v[:, y1, x0] * w10 + v[:, y1, x1] * w11
    ).T  # (m, d)

    def backward(g):
        if not fmap.requires_grad:
            return
        slot = np.zeros_like(fmap.value)
        gt = g.T  # (d, m)
        np.add.at(slot, (slice(None), y0, x0), gt * w00)
        np.add.at(slot, (slice(None), y0, x1), gt * w01)
        np.add.at(slot, (slice(None), y1, x0), gt * w10)
        np.add.at(slot, (slice(None), y1, x1), gt * w11)
        accumulate(fmap, slot)

    return record_op(value, (fmap,), backward)
