"""Scene archive layout: one directory per scene.

    scene_00000/
      image.ppm   binary P6, 8-bit
      cloud.bin   little-endian float32 (x, y, z, reflectance) quadruples
      calib.txt   KITTI-style calibration (P2, R0_rect, Tr_velo_to_cam)
      depth.f32   row-major little-endian float32 depth map, 0 = no surface
      meta        JSON: seed, config digest, image dimensions

A manifest.json at the archive root lists the scene directories in order
plus the generating seed and config digest, so re-running generation with
the same arguments reproduces the tree byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..geometry import CameraModel, PointCloud
from .kitti import load_point_bin, parse_kitti_calib, save_point_bin, write_kitti_calib
from .scenes import SceneConfig, SyntheticScene, generate_scene


def write_ppm(image: np.ndarray) -> bytes:
    """Encode a (3, H, W) float image in [0, 1] as binary P6."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ParseError(f"expected (3, H, W) image, got {image.shape}")
    h, w = image.shape[1], image.shape[2]
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + pixels.transpose(1, 2, 0).tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    """Decode binary P6 into a (3, H, W) float image in [0, 1]."""
    # header: magic, width, height, maxval — whitespace/comment separated
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ParseError("truncated PPM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ParseError(f"not a binary PPM: magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ParseError(f"only 8-bit PPM supported, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + 3 * w * h]
    if len(body) != 3 * w * h:
        raise ParseError(f"PPM body has {len(body)} bytes, expected {3 * w * h}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


@dataclass
class LoadedScene:
    cloud: PointCloud
    image: np.ndarray
    camera: CameraModel
    depth_gt: np.ndarray
    seed: int


def write_scene_dir(path: Path, scene: SyntheticScene, config_digest: str) -> None:
    path.mkdir(parents=True, exist_ok=True)
    (path / "image.ppm").write_bytes(write_ppm(scene.image))
    (path / "cloud.bin").write_bytes(save_point_bin(scene.cloud))
    (path / "calib.txt").write_text(write_kitti_calib(scene.camera))
    (path / "depth.f32").write_bytes(np.ascontiguousarray(scene.depth_gt.astype("<f4")).tobytes())
    meta = {
        "seed": scene.seed,
        "config_digest": config_digest,
        "image_height": int(scene.image.shape[1]),
        "image_width": int(scene.image.shape[2]),
    }
    (path / "meta").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_scene_dir(path: Path) -> LoadedScene:
    path = Path(path)
    try:
        meta = json.loads((path / "meta").read_text())
        image = read_ppm((path / "image.ppm").read_bytes())
        cloud = load_point_bin((path / "cloud.bin").read_bytes())
        camera = parse_kitti_calib(
            (path / "calib.txt").read_text(),
            image_width=meta["image_width"],
            image_height=meta["image_height"],
        )
        depth = np.frombuffer((path / "depth.f32").read_bytes(), dtype="<f4").reshape(
            meta["image_height"], meta["image_width"]
        )
    except FileNotFoundError as exc:
        raise ParseError(f"scene directory {path} is missing {exc.filename}") from None
    return LoadedScene(cloud=cloud, image=image, camera=camera, depth_gt=depth, seed=int(meta["seed"]))


def generate_archive(out_dir: Path, scenes: int, base_seed: int, config: SceneConfig,
                     config_digest: str) -> dict:
    """Generate ``scenes`` scene directories plus the manifest; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(scenes):
        seed = base_seed + i
        name = f"scene_{i:05d}"
        write_scene_dir(out_dir / name, generate_scene(seed, config), config_digest)
        entries.append({"dir": name, "seed": seed})
    manifest = {"base_seed": base_seed, "config_digest": config_digest, "scenes": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def load_archive(data_dir: Path) -> list[LoadedScene]:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ParseError(f"no manifest.json in {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    return [read_scene_dir(data_dir / entry["dir"]) for entry in manifest["scenes"]]
