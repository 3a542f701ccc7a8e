"""The two stochastic view pipelines: a local one that crops sub-regions and
a global one that keeps the whole cell. Both share color jitter, grayscale,
blur, flips and rotation; op order is fixed (crop, jitter, grayscale, blur,
flips, rotation) so that seeded runs are bit-reproducible and geometric
interpolation happens after the color statistics are set.

Every application is recorded in an op trace (name, parameters) so tests and
the preview tool can inspect exactly what a view went through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import (
    bilinear_resize,
    check_image,
    gaussian_blur,
    hflip,
    hsv_to_rgb,
    luminance,
    rgb_to_hsv,
    rotate_bilinear,
    to_grayscale,
    vflip,
)
from .seeding import child_seed

__all__ = [
    "AugmentConfig",
    "ViewPair",
    "color_jitter",
    "to_grayscale",
    "gaussian_blur",
    "flips_and_rotate",
    "random_resized_crop",
    "apply_pipeline",
    "make_view_pair",
    "replay_view",
]

_JITTER_OPS = ("brightness", "contrast", "saturation", "hue")


@dataclass(frozen=True)
class AugmentConfig:
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    blur_sigma: tuple = (0.1, 2.0)
    rotation_deg: tuple = (0.0, 180.0)
    crop_scale: tuple = (0.2, 1.0)
    crop_ratio: tuple = (3.0 / 4.0, 4.0 / 3.0)
    p_jitter: float = 0.8
    p_grayscale: float = 0.2
    p_blur: float = 0.5
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_rotate: float = 1.0
    out_size: int = 32

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation", "hue"):
            if getattr(self, name) < 0:
                raise ValueError(f"jitter strength {name} must be >= 0")
        lo, hi = self.blur_sigma
        if not 0 < lo <= hi:
            raise ValueError(f"blur sigma range must be positive and ordered, got {self.blur_sigma}")
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop scale range must sit inside (0, 1], got {self.crop_scale}")
        lo, hi = self.crop_ratio
        if not 0 < lo <= hi:
            raise ValueError(f"crop ratio range must be positive and ordered, got {self.crop_ratio}")
        lo, hi = self.rotation_deg
        if not 0 <= lo <= hi:
            raise ValueError(f"rotation range must be ordered and >= 0, got {self.rotation_deg}")
        for name in ("p_jitter", "p_grayscale", "p_blur", "p_hflip", "p_vflip", "p_rotate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"probability {name} must be in [0, 1]")


@dataclass
class ViewPair:
    """Two augmented views of one crop plus everything needed to replay them."""

    query_view: np.ndarray
    key_view: np.ndarray
    seed: int
    query_trace: tuple = ()
    key_trace: tuple = ()


def color_jitter(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Brightness/contrast/saturation factors from [1-s, 1+s] and a hue shift
    from [-hue, +hue], applied in a random order. Returns (img, trace entry)."""
    img = check_image(img)
    order = rng.permutation(len(_JITTER_OPS))
    factors = {
        "brightness": float(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)),
        "contrast": float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)),
        "saturation": float(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)),
        "hue": float(rng.uniform(-cfg.hue, cfg.hue)),
    }
    out = img
    for idx in order:
        op = _JITTER_OPS[idx]
        f = np.float32(factors[op])
        if op == "brightness":
            out = out * f
        elif op == "contrast":
            gray_mean = np.float32(luminance(out).mean())
            out = out * f + gray_mean * (np.float32(1.0) - f)
        elif op == "saturation":
            out = out * f + to_grayscale(out) * (np.float32(1.0) - f)
        elif op == "hue" and factors["hue"] != 0.0:
            hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
            hsv[..., 0] = (hsv[..., 0] + f) % 1.0
            out = hsv_to_rgb(hsv)
        out = np.clip(out, 0.0, 1.0)
    trace = ("jitter", tuple(_JITTER_OPS[i] for i in order),
             tuple(factors[op] for op in _JITTER_OPS))
    return out, trace


def random_resized_crop(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Sample a window with area fraction from crop_scale and aspect from
    crop_ratio, then resize to out_size. Falls back to a center square after
    10 failed window draws. Returns (img, trace entry)."""
    img = check_image(img)
    h, w = img.shape[:2]
    if h < cfg.out_size or w < cfg.out_size:
        raise ValueError(f"crop source must be at least {cfg.out_size}px, got {h}x{w}")
    for _ in range(10):
        area = float(rng.uniform(*cfg.crop_scale)) * h * w
        ratio = float(rng.uniform(*cfg.crop_ratio))
        cw = int(round(np.sqrt(area * ratio)))
        ch = int(round(np.sqrt(area / ratio)))
        if 1 <= ch <= h and 1 <= cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            window = img[top : top + ch, left : left + cw]
            out = bilinear_resize(window, cfg.out_size, cfg.out_size)
            return out, ("crop", (top, left, ch, cw))
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    window = img[top : top + side, left : left + side]
    out = bilinear_resize(window, cfg.out_size, cfg.out_size)
    return out, ("crop", (top, left, side, side))


def flips_and_rotate(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Each flip with its own probability, then rotation by a uniform angle.
    Returns (img, list of trace entries)."""
    img = check_image(img)
    trace = []
    if rng.random() < cfg.p_hflip:
        img = hflip(img)
        trace.append(("hflip", ()))
    if rng.random() < cfg.p_vflip:
        img = vflip(img)
        trace.append(("vflip", ()))
    if rng.random() < cfg.p_rotate:
        angle = float(rng.uniform(*cfg.rotation_deg))
        img = np.clip(rotate_bilinear(img, angle), 0.0, 1.0)
        trace.append(("rotate", (angle,)))
    return img, trace


def apply_pipeline(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                   include_crop: bool):
    """One full augmentation pass. include_crop selects the local pipeline.

    Returns (view, trace). The draw order is fixed; every stochastic gate
    consumes exactly one uniform so the stream layout is stable.
    """
    img = check_image(img)
    trace = []
    if include_crop:
        img, entry = random_resized_crop(img, cfg, rng)
        trace.append(entry)
    elif img.shape[:2] != (cfg.out_size, cfg.out_size):
        img = bilinear_resize(img, cfg.out_size, cfg.out_size)
        trace.append(("resize", (cfg.out_size,)))
    if rng.random() < cfg.p_jitter:
        img, entry = color_jitter(img, cfg, rng)
        trace.append(entry)
    if rng.random() < cfg.p_grayscale:
        img = to_grayscale(img)
        trace.append(("grayscale", ()))
    if rng.random() < cfg.p_blur:
        sigma = float(rng.uniform(*cfg.blur_sigma))
        img = gaussian_blur(img, sigma)
        trace.append(("blur", (sigma,)))
    img, geo = flips_and_rotate(img, cfg, rng)
    trace.extend(geo)
    return np.clip(img, 0.0, 1.0).astype(np.float32), tuple(trace)


def make_view_pair(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                   local_global_enabled: bool = True) -> ViewPair:
    """Query view from the local (cropping) pipeline, key view from the global
    one. With the local-global connection disabled both views crop, which is
    the symmetric-augmentation baseline.

    rng is consumed only to mint the pair's seed; the views derive from that
    seed alone, so a ViewPair can be replayed from (image, seed, cfg).
    """
    seed = child_seed(rng)
    pair_rng = np.random.default_rng(seed)
    query_view, query_trace = apply_pipeline(img, cfg, pair_rng, include_crop=True)
    key_view, key_trace = apply_pipeline(img, cfg, pair_rng,
                                         include_crop=not local_global_enabled)
    return ViewPair(query_view=query_view, key_view=key_view, seed=seed,
                    query_trace=query_trace, key_trace=key_trace)


def replay_view(img: np.ndarray, cfg: AugmentConfig, seed: int,
                local_global_enabled: bool = True) -> ViewPair:
    """Rebuild the exact ViewPair previously minted with this seed."""
    pair_rng = np.random.default_rng(seed)
    query_view, query_trace = apply_pipeline(img, cfg, pair_rng, include_crop=True)
    key_view, key_trace = apply_pipeline(img, cfg, pair_rng,
                                         include_crop=not local_global_enabled)
    return ViewPair(query_view=query_view, key_view=key_view, seed=seed,
                    query_trace=query_trace, key_trace=key_trace)
