"""Point-branch and image-branch feature extractors plus projection heads.

The point branch chains three set-abstraction stages; the image branch is a
small four-stage convolutional stack with total stride 8. Both end in a
two-layer MLP head producing 128-d embeddings, unit-normalized by default
so cosine similarity and temperature scaling behave as intended. Every
trainable array lives in a flat name-keyed registry whose names partition
cleanly into a point group and an image group; the hybrid optimizer and the
partial checkpoint loader both rely on that prefix discipline.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffcore as dc
from .diffcore import DiffArray, RunningNorm
from .errors import ConfigError, UndersizedSceneError
from .geometry import PointCloud
from .sampling import SampledSet, StageParams, set_abstraction

POINT_PREFIXES = ("point_branch.", "point_head.")
IMAGE_PREFIXES = ("image_branch.", "image_head.")


@dataclass(frozen=True)
class EncoderConfig:
    # point branch: per-stage center counts, output widths, ball radii (meters)
    stage_points: tuple = (512, 256, 128)
    stage_widths: tuple = (32, 64, 128)
    stage_radii: tuple = (0.8, 1.6, 3.2)
    max_neighbors: int = 16
    # feature-metric FPS kicks in once features are learned; stage 1 sees raw
    # reflectance only, so it samples purely by geometry
    feature_fps_from_stage: int = 2
    # image branch: two 3x3 convs per stage, 2x downsampling entering stages 2+
    image_channels: tuple = (16, 32, 64, 64)
    head_dim: int = 128
    normalize_embeddings: bool = True
    norm_momentum: float = 0.1
    norm_eps: float = 1e-5
    dtype: str = "float64"

    def __post_init__(self):
        if not (len(self.stage_points) == len(self.stage_widths) == len(self.stage_radii)):
            raise ConfigError("stage_points, stage_widths, stage_radii must have equal length")
        if any(k <= 0 for k in self.stage_points) or any(w <= 0 for w in self.stage_widths):
            raise ConfigError("stage sizes and widths must be positive")
        if sorted(self.stage_points, reverse=True) != list(self.stage_points):
            raise ConfigError("stage_points must be non-increasing")
        if self.head_dim <= 0:
            raise ConfigError("head_dim must be positive")

    @property
    def image_stride(self) -> int:
        return 2 ** (len(self.image_channels) - 1)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class ImageFeatureMap:
    """Global image feature map plus the stride mapping pixels to cells."""

    features: DiffArray  # (d, H/stride, W/stride)
    stride: int


class EncoderParams:
    """Flat registry of trainable arrays, norm buffers, and decay flags."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        self.params: "OrderedDict[str, DiffArray]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.no_decay: set[str] = set()

    def register(self, name: str, value: np.ndarray, no_decay: bool = False) -> DiffArray:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name: {name}")
        arr = dc.parameter(value, dtype=self.config.np_dtype)
        self.params[name] = arr
        if no_decay:
            self.no_decay.add(name)
        return arr

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ConfigError(f"duplicate buffer name: {name}")
        buf = np.array(value, dtype=self.config.np_dtype)
        self.buffers[name] = buf
        return buf

    def names(self, group: Optional[str] = None) -> list[str]:
        if group is None:
            return list(self.params)
        prefixes = POINT_PREFIXES if group == "point" else IMAGE_PREFIXES
        return [n for n in self.params if n.startswith(prefixes)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def audit_partition(self) -> None:
        """Every trainable array must belong to exactly one branch group."""
        for name in self.params:
            in_point = name.startswith(POINT_PREFIXES)
            in_image = name.startswith(IMAGE_PREFIXES)
            if in_point == in_image:
                raise ConfigError(f"parameter {name!r} does not partition into point/image groups")

    # structured views built by the factory below
    point_stages: list[StageParams]
    point_head: "HeadParams"
    image_convs: list["ConvUnit"]
    image_head: "HeadParams"


@dataclass
class HeadParams:
    w0: DiffArray
    b0: DiffArray
    w1: DiffArray
    b1: DiffArray


@dataclass
class ConvUnit:
    weight: DiffArray
    bias: DiffArray
    norm: RunningNorm
    pool_before: bool  # 2x average pool entering this stage


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Initialize all trainable state (Kaiming-uniform weights, zero biases)."""
    reg = EncoderParams(config)

    # point branch: stage MLPs on [offset(3), feature] rows
    stages = []
    d_in = 1  # raw reflectance channel
    for i, width in enumerate(config.stage_widths):
        full_in = 3 + d_in
        prefix = f"point_branch.stage{i}"
        w0 = reg.register(f"{prefix}.w0", _kaiming_uniform(rng, (full_in, width), full_in))
        b0 = reg.register(f"{prefix}.b0", np.zeros(width), no_decay=True)
        w1 = reg.register(f"{prefix}.w1", _kaiming_uniform(rng, (width, width), width))
        b1 = reg.register(f"{prefix}.b1", np.zeros(width), no_decay=True)
        stages.append(StageParams(w0=w0, b0=b0, w1=w1, b1=b1))
        d_in = width
    reg.point_stages = stages
    reg.point_head = _build_head(reg, "point_head", config.stage_widths[-1], config.head_dim, rng)

    # image branch: two convs per stage, 2x average pool entering stages 2+
    convs = []
    c_in = 3
    for stage, c_out in enumerate(config.image_channels):
        for j in range(2):
            prefix = f"image_branch.stage{stage}.conv{j}"
            fan_in = c_in * 9
            weight = reg.register(f"{prefix}.w", _kaiming_uniform(rng, (c_out, c_in, 3, 3), fan_in))
            bias = reg.register(f"{prefix}.b", np.zeros(c_out), no_decay=True)
            gamma = reg.register(f"{prefix}.norm.gamma", np.ones(c_out), no_decay=True)
            beta = reg.register(f"{prefix}.norm.beta", np.zeros(c_out), no_decay=True)
            mean = reg.register_buffer(f"{prefix}.norm.running_mean", np.zeros(c_out))
            var = reg.register_buffer(f"{prefix}.norm.running_var", np.ones(c_out))
            convs.append(
                ConvUnit(
                    weight=weight,
                    bias=bias,
                    norm=RunningNorm(gamma, beta, mean, var, momentum=config.norm_momentum, eps=config.norm_eps),
                    pool_before=(stage > 0 and j == 0),
                )
            )
            c_in = c_out
    reg.image_convs = convs
    reg.image_head = _build_head(reg, "image_head", config.image_channels[-1], config.head_dim, rng)

    reg.audit_partition()
    return reg


def _build_head(reg: EncoderParams, prefix: str, d_in: int, d_out: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        w0=reg.register(f"{prefix}.w0", _kaiming_uniform(rng, (d_in, d_in), d_in)),
        b0=reg.register(f"{prefix}.b0", np.zeros(d_in), no_decay=True),
        w1=reg.register(f"{prefix}.w1", _kaiming_uniform(rng, (d_in, d_out), d_in)),
        b1=reg.register(f"{prefix}.b1", np.zeros(d_out), no_decay=True),
    )


def encode_points(
    cloud: PointCloud,
    params: EncoderParams,
    rng: Optional[np.random.Generator] = None,
) -> SampledSet:
    """Run the chained set-abstraction stages over a cloud.

    With an rng, each stage draws a random start point (different runs over
    the same cloud then see different samples, which stretches the data);
    without one, starts pin to index 0 for deterministic tests.
    """
    config = params.config
    if cloud.n < config.stage_points[-1]:
        raise UndersizedSceneError(
            f"cloud has {cloud.n} points, final stage needs {config.stage_points[-1]}"
        )
    locations = cloud.locations
    if cloud.points.shape[1] >= 4:
        feats = cloud.points[:, 3:4]
    else:
        feats = np.zeros((cloud.n, 1))
    features = dc.constant(feats.astype(config.np_dtype))

    for i, stage in enumerate(params.point_stages):
        k = min(config.stage_points[i], locations.shape[0])
        start = int(rng.integers(locations.shape[0])) if rng is not None else 0
        out = set_abstraction(
            locations,
            features,
            stage,
            k=k,
            radius=config.stage_radii[i],
            max_neighbors=config.max_neighbors,
            rng=rng,
            start_index=start,
            use_feature_fps=(i + 1) >= config.feature_fps_from_stage,
        )
        locations, features = out.locations, out.features
    return SampledSet(locations=locations, features=features)


def encode_image(image, params: EncoderParams, update_stats: bool = False) -> ImageFeatureMap:
    """Run the convolutional stack; output stride is 8 under the default plan."""
    config = params.config
    x = dc.as_array(image)
    if x.value.ndim != 3 or x.value.shape[0] != 3:
        raise ConfigError(f"encode_image expects (3, H, W), got {x.value.shape}")
    _, h, w = x.value.shape
    stride = config.image_stride
    if h % stride or w % stride:
        raise ConfigError(f"image size {h}x{w} not divisible by stride {stride}")
    if x.value.dtype != config.np_dtype:
        x = dc.constant(x.value.astype(config.np_dtype)) if not x.requires_grad else x
    for unit in params.image_convs:
        if unit.pool_before:
            x = dc.avg_pool2d(x, 2)
        if update_stats:
            x = dc.conv2d(x, unit.weight, stride=1, padding=1)
            x = dc.add(x, dc.reshape(unit.bias, (-1, 1, 1)))
            x = unit.norm(x, update_stats=True)
        else:
            # frozen statistics: fold the per-channel normalization into the
            # kernel and bias so the full-resolution map is touched once
            norm = unit.norm
            inv = (1.0 / np.sqrt(norm.running_var + norm.eps)).astype(x.value.dtype)
            scale = dc.mul(norm.gamma, dc.constant(inv))
            shift = dc.sub(norm.beta, dc.mul(scale, dc.constant(norm.running_mean.astype(x.value.dtype))))
            kernel = dc.mul(unit.weight, dc.reshape(scale, (-1, 1, 1, 1)))
            bias = dc.add(dc.mul(unit.bias, scale), shift)
            x = dc.conv2d(x, kernel, stride=1, padding=1)
            x = dc.add(x, dc.reshape(bias, (-1, 1, 1)))
        x = dc.relu(x)
    return ImageFeatureMap(features=x, stride=stride)


def project_head(features: DiffArray, head: HeadParams, normalize: bool = True) -> DiffArray:
    """Two-layer MLP into the contrastive embedding space; rows unit-norm
    unless normalization is disabled by configuration."""
    if features.value.shape[1] != head.w0.value.shape[0]:
        raise ConfigError(
            f"head expects input width {head.w0.value.shape[0]}, got {features.value.shape[1]}"
        )
    h = dc.relu(dc.add(dc.matmul(features, head.w0), head.b0))
    out = dc.add(dc.matmul(h, head.w1), head.b1)
    if normalize:
        out = dc.l2_normalize(out, epsilon=1e-12)
    return out
