"""Network building blocks: conv/linear layers, group norm, a small
pre-activation residual backbone, and the two-layer MLP heads.

Parameters live in flat ``dict[str, Tensor]`` maps with hierarchical names
("backbone.stem.w", "proj.fc1.w", ...) so the optimizer, the momentum update
and the checkpoint format can all iterate them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    avg_pool2d,
    conv2d,
    div,
    flatten,
    matmul,
    mul,
    relu,
    reshape,
    sqrt,
    sub,
    tmean,
)


@dataclass(frozen=True)
class BackboneConfig:
    """Shape of the residual feature extractor.

    The default is a desk-scale pre-activation residual net: 3 stages of 2
    blocks each at 16/32/64 channels, global average pooling, and a linear
    map to a 512-wide feature vector. ``resnet18()`` gives the paper-scale
    preset of the same topology family.
    """

    input_size: int = 32
    in_channels: int = 3
    stages: tuple = ((16, 2), (32, 2), (64, 2))
    stage_strides: tuple = (2, 2, 2)
    feature_dim: int = 512
    groups: int = 8

    def __post_init__(self):
        if not self.stages:
            raise ValueError("backbone needs at least one stage")
        if len(self.stage_strides) != len(self.stages):
            raise ValueError("stage_strides must match stages")
        for channels, blocks in self.stages:
            if channels % self.groups:
                raise ValueError(f"stage width {channels} not divisible by groups={self.groups}")
            if blocks < 1:
                raise ValueError("each stage needs at least one block")


def resnet18(feature_dim: int = 512) -> BackboneConfig:
    """Paper-scale preset: pre-activated ResNet18 layout for 32x32 inputs."""
    return BackboneConfig(
        stages=((64, 2), (128, 2), (256, 2), (512, 2)),
        stage_strides=(1, 2, 2, 2),
        feature_dim=feature_dim,
        groups=8,
    )


@dataclass(frozen=True)
class HeadConfig:
    """Projector (512 -> 128 -> 64) and predictor (64 -> 32 -> 64) MLP sizes."""

    projector: tuple = (512, 128, 64)
    predictor: tuple = (64, 32, 64)

    def __post_init__(self):
        if self.predictor[0] != self.projector[2]:
            raise ValueError("predictor input width must equal projector output width")
        if self.predictor[2] != self.projector[2]:
            raise ValueError("predictor output width must equal projector output width")

    @property
    def embed_dim(self) -> int:
        return self.projector[2]


# ---------------------------------------------------------------------------
# parameter init

def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)


def init_conv(params: dict, name: str, rng, in_c: int, out_c: int, k: int) -> None:
    params[f"{name}.w"] = _uniform(rng, (out_c, in_c, k, k), in_c * k * k)
    params[f"{name}.b"] = _zeros((out_c, 1, 1))


def init_linear(params: dict, name: str, rng, in_d: int, out_d: int) -> None:
    params[f"{name}.w"] = _uniform(rng, (in_d, out_d), in_d)
    params[f"{name}.b"] = _zeros((out_d,))


def init_group_norm(params: dict, name: str, channels: int) -> None:
    params[f"{name}.g"] = _ones((channels, 1, 1))
    params[f"{name}.b"] = _zeros((channels, 1, 1))


def conv(params: dict, name: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return add(conv2d(x, params[f"{name}.w"], stride=stride, padding=padding), params[f"{name}.b"])


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    return add(matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def group_norm(params: dict, name: str, x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-group normalization over (channels/groups, H, W), then affine."""
    n, c, h, w = x.shape
    xg = reshape(x, (n, groups, (c // groups) * h * w))
    mu = tmean(xg, axis=2, keepdims=True)
    centered = sub(xg, mu)
    var = tmean(mul(centered, centered), axis=2, keepdims=True)
    std = sqrt(add(var, Tensor(np.asarray(eps, dtype=x.dtype))))
    xn = reshape(div(centered, std), (n, c, h, w))
    return add(mul(xn, params[f"{name}.g"]), params[f"{name}.b"])


# ---------------------------------------------------------------------------
# backbone

def init_backbone(cfg: BackboneConfig, rng: np.random.Generator, prefix: str = "backbone") -> dict:
    params: dict = {}
    c0 = cfg.stages[0][0]
    init_conv(params, f"{prefix}.stem", rng, cfg.in_channels, c0, 3)
    in_c = c0
    for s, (channels, blocks) in enumerate(cfg.stages):
        for b in range(blocks):
            name = f"{prefix}.s{s}.b{b}"
            stride = cfg.stage_strides[s] if b == 0 else 1
            init_group_norm(params, f"{name}.gn1", in_c)
            init_conv(params, f"{name}.conv1", rng, in_c, channels, 3)
            init_group_norm(params, f"{name}.gn2", channels)
            init_conv(params, f"{name}.conv2", rng, channels, channels, 3)
            if stride != 1 or in_c != channels:
                init_conv(params, f"{name}.down", rng, in_c, channels, 1)
            in_c = channels
    init_group_norm(params, f"{prefix}.gn_out", in_c)
    init_linear(params, f"{prefix}.fc", rng, in_c, cfg.feature_dim)
    return params


def _preact_block(params: dict, name: str, x: Tensor, stride: int, in_c: int, out_c: int, groups: int) -> Tensor:
    pre = relu(group_norm(params, f"{name}.gn1", x, groups))
    if f"{name}.down.w" in params:
        shortcut = conv(params, f"{name}.down", pre, stride=stride)
    else:
        shortcut = x
    h = conv(params, f"{name}.conv1", pre, stride=stride, padding=1)
    h = relu(group_norm(params, f"{name}.gn2", h, groups))
    h = conv(params, f"{name}.conv2", h, stride=1, padding=1)
    return add(h, shortcut)


def backbone_forward(params: dict, x: Tensor, cfg: BackboneConfig, prefix: str = "backbone") -> Tensor:
    """Images (N, 3, S, S) in [0, 1] -> features (N, feature_dim)."""
    if x.data.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
        raise ValueError(
            f"backbone expects (N, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}), got {x.shape}"
        )
    h = conv(params, f"{prefix}.stem", x, stride=1, padding=1)
    in_c = cfg.stages[0][0]
    for s, (channels, blocks) in enumerate(cfg.stages):
        for b in range(blocks):
            stride = cfg.stage_strides[s] if b == 0 else 1
            h = _preact_block(params, f"{prefix}.s{s}.b{b}", h, stride, in_c, channels, cfg.groups)
            in_c = channels
    h = relu(group_norm(params, f"{prefix}.gn_out", h, cfg.groups))
    h = avg_pool2d(h, kernel=h.shape[2])
    h = flatten(h)
    return linear(params, f"{prefix}.fc", h)


# ---------------------------------------------------------------------------
# MLP heads

def init_mlp(dims: tuple, rng: np.random.Generator, prefix: str) -> dict:
    params: dict = {}
    init_linear(params, f"{prefix}.fc1", rng, dims[0], dims[1])
    init_linear(params, f"{prefix}.fc2", rng, dims[1], dims[2])
    return params


def mlp_forward(params: dict, x: Tensor, prefix: str) -> Tensor:
    return linear(params, f"{prefix}.fc2", relu(linear(params, f"{prefix}.fc1", x)))


def count_params(params: dict) -> int:
    return sum(t.data.size for t in params.values())
