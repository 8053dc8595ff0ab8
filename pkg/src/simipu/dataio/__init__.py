"""Synthetic scene generation and KITTI-format ingestion."""

from .archive import LoadedScene, generate_archive, load_archive, read_ppm, read_scene_dir, write_ppm, write_scene_dir
from .kitti import load_point_bin, parse_kitti_calib, save_point_bin, write_kitti_calib
from .scenes import SceneConfig, SyntheticScene, generate_scene

__all__ = [
    "LoadedScene",
    "SceneConfig",
    "SyntheticScene",
    "generate_archive",
    "generate_scene",
    "load_archive",
    "load_point_bin",
    "parse_kitti_calib",
    "read_ppm",
    "read_scene_dir",
    "save_point_bin",
    "write_kitti_calib",
    "write_ppm",
    "write_scene_dir",
]
