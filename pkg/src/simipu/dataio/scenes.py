"""Synthetic paired scenes: point cloud, rendered image, calibration, depth.

Each scene is a ground-plane patch plus a handful of axis-aligned boxes in
front of a pitched-down pinhole camera. The depth map comes from exact
per-pixel ray casting against the analytic surfaces, the image is flat
shading (per-object albedo times depth attenuation, quantized to the 8-bit
grid so archives round-trip losslessly), and cloud points are sampled on
the surfaces with Gaussian position noise. Every accepted point is checked
against the rendered depth map at its projected pixel, so the cloud is
occlusion-free by construction.

The LIDAR frame is x forward, y left, z up; the camera sits at the LIDAR
origin looking along +x with a configurable downward pitch, and the ground
plane lies at z = -camera_height.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, GenerationError
from ..geometry import CameraModel, PointCloud, project


@dataclass(frozen=True)
class SceneConfig:
    image_height: int = 128
    image_width: int = 384
    focal: float = 200.0
    camera_height: float = 2.2
    camera_pitch: float = 0.18  # radians, positive pitches the view down
    min_boxes: int = 2
    max_boxes: int = 6
    box_footprint: tuple = (0.6, 1.8)      # side length range, meters
    box_height: tuple = (0.6, 2.0)
    box_zone_x: tuple = (4.0, 9.0)
    plane_zone_x: tuple = (4.4, 7.0)       # where plane points are sampled
    plane_extent_x: tuple = (2.5, 20.0)    # where the plane exists at all
    plane_half_width: float = 12.0
    points_per_scene: int = 1024
    noise_sigma: float = 0.02
    plane_fraction: float = 0.3
    shade_max_depth: float = 16.0
    image_mode: str = "shaded"             # "shaded" | "noise" (negative control)
    depth_agreement: float = 0.08          # accept threshold, meters
    z_min: float = 0.1

    def __post_init__(self):
        if self.min_boxes < 0 or self.max_boxes < self.min_boxes:
            raise ConfigError(f"invalid box count range [{self.min_boxes}, {self.max_boxes}]")
        if self.points_per_scene < 1:
            raise ConfigError("points_per_scene must be >= 1")
        if self.image_mode not in ("shaded", "noise"):
            raise ConfigError(f"unknown image_mode {self.image_mode!r}")
        if not 0.0 <= self.plane_fraction <= 1.0:
            raise ConfigError(f"plane_fraction must be in [0, 1], got {self.plane_fraction}")


@dataclass
class SyntheticScene:
    cloud: PointCloud
    image: np.ndarray        # (3, H, W) in [0, 1]
    camera: CameraModel
    depth_gt: np.ndarray     # (H, W) meters, 0 where no surface
    seed: int


def _build_camera(config: SceneConfig) -> CameraModel:
    # axis permutation lidar -> camera (x_cam = -y, y_cam = -z, z_cam = x),
    # then a downward pitch about the camera x axis
    perm = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    c, s = np.cos(config.camera_pitch), np.sin(config.camera_pitch)
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    intrinsics = np.array(
        [
            [config.focal, 0.0, (config.image_width - 1) / 2.0],
            [0.0, config.focal, (config.image_height - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return CameraModel(
        intrinsics=intrinsics,
        extrinsic_rotation=pitch @ perm,
        extrinsic_translation=np.zeros(3),
        image_width=config.image_width,
        image_height=config.image_height,
    )


@dataclass
class _Box:
    lo: np.ndarray  # (3,) AABB corner, lidar frame
    hi: np.ndarray


def _ray_dirs(camera: CameraModel, uv: np.ndarray) -> np.ndarray:
    """LIDAR-frame unit-z_cam ray directions through continuous pixel coords."""
    d_cam = np.stack(
        [
            (uv[:, 0] - camera.cx) / camera.fx,
            (uv[:, 1] - camera.cy) / camera.fy,
            np.ones(uv.shape[0]),
        ],
        axis=1,
    )
    return d_cam @ camera.extrinsic_rotation  # == R_ext.T applied to each row


def _cast(config: SceneConfig, boxes: list[_Box], dirs: np.ndarray):
    """Nearest-surface hit along each ray: (depth meters, surface id).

    Surface id 0 is the plane, 1..n the boxes; id -1 and depth 0 mean no hit.
    Depth equals camera z because directions are normalized to unit z_cam.
    """
    n = dirs.shape[0]
    hits = np.full((len(boxes) + 1, n), np.inf)

    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = -config.camera_height / dz
    p = dirs * t_plane[:, None]
    ok = (
        (dz < 0)
        & (t_plane > config.z_min)
        & (p[:, 0] >= config.plane_extent_x[0])
        & (p[:, 0] <= config.plane_extent_x[1])
        & (np.abs(p[:, 1]) <= config.plane_half_width)
    )
    hits[0] = np.where(ok, t_plane, np.inf)

    safe = np.where(np.abs(dirs) < 1e-300, np.copysign(1e-300, dirs), dirs)
    for b, box in enumerate(boxes, start=1):
        t1 = box.lo[None, :] / safe
        t2 = box.hi[None, :] / safe
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        ok = (tmax >= tmin) & (tmin > config.z_min)
        hits[b] = np.where(ok, tmin, np.inf)

    ids = np.argmin(hits, axis=0)
    depth = hits[ids, np.arange(n)]
    miss = ~np.isfinite(depth)
    ids = np.where(miss, -1, ids)
    depth = np.where(miss, 0.0, depth)
    return depth, ids


def _place_boxes(config: SceneConfig, camera: CameraModel, rng: np.random.Generator) -> list[_Box]:
    count = int(rng.integers(config.min_boxes, config.max_boxes + 1))
    boxes: list[_Box] = []
    footprints: list[tuple] = []
    attempts = 0
    while len(boxes) < count and attempts < 40 * max(count, 1):
        attempts += 1
        x = rng.uniform(*config.box_zone_x)
        lat = 0.55 * x
        y = rng.uniform(-lat, lat)
        wx = rng.uniform(*config.box_footprint)
        wy = rng.uniform(*config.box_footprint)
        h = rng.uniform(*config.box_height)
        lo = np.array([x - wx / 2, y - wy / 2, -config.camera_height])
        hi = np.array([x + wx / 2, y + wy / 2, -config.camera_height + h])
        margin = 0.4
        clash = any(
            lo[0] - margin < fhi[0] and hi[0] + margin > flo[0]
            and lo[1] - margin < fhi[1] and hi[1] + margin > flo[1]
            for flo, fhi in footprints
        )
        if clash:
            continue
        corners = np.array([[cx, cy, cz] for cx in (lo[0], hi[0]) for cy in (lo[1], hi[1]) for cz in (lo[2], hi[2])])
        _, _, valid = project(corners, camera, z_min=config.z_min)
        if not valid.any():
            continue  # entirely out of view: useless for pairing
        boxes.append(_Box(lo=lo, hi=hi))
        footprints.append((lo[:2].copy(), hi[:2].copy()))
    return boxes


def _sample_plane(config: SceneConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    x = rng.uniform(config.plane_zone_x[0], config.plane_zone_x[1], size=count)
    lat = 0.55 * x
    y = rng.uniform(-1.0, 1.0, size=count) * lat
    z = np.full(count, -config.camera_height)
    return np.stack([x, y, z], axis=1)


def _sample_box(box: _Box, rng: np.random.Generator, count: int) -> np.ndarray:
    """Uniform-by-area samples over the four sides and top of one box."""
    size = box.hi - box.lo
    faces = [
        (0, box.lo[0]), (0, box.hi[0]),   # x- and x+ sides
        (1, box.lo[1]), (1, box.hi[1]),   # y- and y+ sides
        (2, box.hi[2]),                   # top
    ]
    areas = np.array([
        size[1] * size[2], size[1] * size[2],
        size[0] * size[2], size[0] * size[2],
        size[0] * size[1],
    ])
    choice = rng.choice(len(faces), size=count, p=areas / areas.sum())
    u = rng.uniform(size=count)
    v = rng.uniform(size=count)
    pts = np.empty((count, 3))
    for f, (axis, plane_value) in enumerate(faces):
        sel = choice == f
        if not sel.any():
            continue
        others = [a for a in range(3) if a != axis]
        pts[sel, axis] = plane_value
        pts[sel, others[0]] = box.lo[others[0]] + u[sel] * size[others[0]]
        pts[sel, others[1]] = box.lo[others[1]] + v[sel] * size[others[1]]
    return pts


def _propose(config: SceneConfig, boxes: list[_Box], rng: np.random.Generator, count: int):
    """Draw surface candidates from the plane/box mixture; returns points and
    surface ids (0 = plane, 1.. = boxes)."""
    if boxes:
        surf = np.where(
            rng.uniform(size=count) < config.plane_fraction,
            0,
            rng.integers(1, len(boxes) + 1, size=count),
        )
    else:
        surf = np.zeros(count, dtype=int)
    pts = np.empty((count, 3))
    sel = surf == 0
    if sel.any():
        pts[sel] = _sample_plane(config, rng, int(sel.sum()))
    for b, box in enumerate(boxes, start=1):
        sel = surf == b
        if sel.any():
            pts[sel] = _sample_box(box, rng, int(sel.sum()))
    return pts, surf


def _accept_points(
    config: SceneConfig,
    camera: CameraModel,
    boxes: list[_Box],
    depth_map: np.ndarray,
    rng: np.random.Generator,
    count: int,
):
    """Propose-and-check until ``count`` points pass visibility and depth
    agreement with the rendered map. Mixture proposals keep making progress
    as long as any surface is visible; a dead camera raises GenerationError.
    """
    out_pts = np.empty((count, 3))
    out_surf = np.empty(count, dtype=int)
    have = 0
    rounds = 0
    while have < count:
        rounds += 1
        if rounds > 80:
            raise GenerationError(
                "could not place points in view; check camera/zone configuration"
            )
        batch = max(128, 2 * (count - have))
        cand, surf = _propose(config, boxes, rng, batch)
        uv0, z0, valid0 = project(cand, camera, z_min=config.z_min)
        keep = valid0.copy()
        if keep.any():
            hit_depth, _ = _cast(config, boxes, _ray_dirs(camera, uv0[keep]))
            occluded = np.abs(hit_depth - z0[keep]) > 0.02
            keep[np.flatnonzero(keep)[occluded]] = False
        cand, surf = cand[keep], surf[keep]
        if cand.shape[0] == 0:
            continue
        cand = cand + rng.normal(0.0, config.noise_sigma, size=cand.shape)
        uv, z, valid = project(cand, camera, z_min=config.z_min)
        keep = valid.copy()
        if keep.any():
            pix = np.rint(uv[keep]).astype(int)
            pix[:, 0] = np.clip(pix[:, 0], 0, config.image_width - 1)
            pix[:, 1] = np.clip(pix[:, 1], 0, config.image_height - 1)
            dg = depth_map[pix[:, 1], pix[:, 0]]
            bad = (dg <= 0.0) | (np.abs(dg - z[keep]) > config.depth_agreement)
            keep[np.flatnonzero(keep)[bad]] = False
        cand, surf = cand[keep], surf[keep]
        take = min(count - have, cand.shape[0])
        out_pts[have : have + take] = cand[:take]
        out_surf[have : have + take] = surf[:take]
        have += take
    return out_pts, out_surf


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SyntheticScene:
    """Build one deterministic synthetic scene from a seed."""
    rng = np.random.default_rng(seed)
    camera = _build_camera(config)
    boxes = _place_boxes(config, camera, rng)

    h, w = config.image_height, config.image_width
    grid_u, grid_v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pixel_uv = np.stack([grid_u.reshape(-1), grid_v.reshape(-1)], axis=1)
    depth_flat, ids_flat = _cast(config, boxes, _ray_dirs(camera, pixel_uv))
    if not (ids_flat >= 0).any():
        raise GenerationError("no surface is visible from the camera")
    depth_map = depth_flat.reshape(h, w).astype(np.float32)
    ids = ids_flat.reshape(h, w)

    albedo = rng.uniform(0.15, 0.95, size=(len(boxes) + 1, 3))
    if config.image_mode == "noise":
        image = rng.uniform(0.0, 1.0, size=(3, h, w))
    else:
        shade = np.clip(1.0 - depth_map / config.shade_max_depth, 0.2, 1.0)
        image = np.where(
            ids[None, :, :] >= 0,
            albedo.T[:, np.maximum(ids, 0)] * shade[None, :, :],
            0.04,
        )
    image = np.round(image * 255.0) / 255.0  # pin to the 8-bit grid: archives round-trip exactly

    n_total = config.points_per_scene
    reflect_base = rng.uniform(0.15, 0.85, size=len(boxes) + 1)
    locations, surfaces = _accept_points(config, camera, boxes, depth_map, rng, n_total)
    reflectance = reflect_base[surfaces] + rng.normal(0.0, 0.02, size=n_total)
    reflectance = np.clip(reflectance, 0.0, 1.0)
    order = rng.permutation(n_total)  # interleave surfaces so subsampling stays unbiased
    points = np.hstack([locations, reflectance[:, None]])[order]

    return SyntheticScene(
        cloud=PointCloud(points),
        image=image,
        camera=camera,
        depth_gt=depth_map,
        seed=int(seed),
    )
