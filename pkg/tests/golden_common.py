"""Shared definitions for the golden augmentation fixtures: the synthetic
source image, the fixed (config, seed) cases, and u8 quantization."""

import numpy as np

from ccrl.augment import AugmentConfig, make_view_pair


def golden_source() -> np.ndarray:
    """A deterministic 32x32 test card: hue gradient, a bright disk, noise."""
    rng = np.random.default_rng(20240)
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    img = np.zeros((32, 32, 3), dtype=np.float32)
    img[..., 0] = xx / 31.0
    img[..., 1] = yy / 31.0
    img[..., 2] = 0.5
    disk = (yy - 14) ** 2 + (xx - 17) ** 2 <= 49
    img[disk] = [0.9, 0.85, 0.2]
    img += rng.normal(0, 0.02, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def GOLDEN_CASES(img):
    cfg = AugmentConfig()
    yield "golden_pair_a", make_view_pair(img, cfg, np.random.default_rng(101))
    yield "golden_pair_b", make_view_pair(img, cfg, np.random.default_rng(202))
    yield "golden_pair_sym", make_view_pair(img, cfg, np.random.default_rng(303),
                                            local_global_enabled=False)
