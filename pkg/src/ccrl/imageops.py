"""Low-level image math shared by the augmentation pipelines and crop
extraction: bilinear resampling, RGB/HSV conversion, luminance, reflection
indexing. Images are (H, W, 3) float32 in [0, 1] throughout.
"""

from __future__ import annotations

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    return img


def luminance(img: np.ndarray) -> np.ndarray:
    """Per-pixel luma, shape (H, W)."""
    return check_image(img) @ LUMA


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Replicate 0.299R + 0.587G + 0.114B into all three channels."""
    return np.repeat(luminance(img)[:, :, None], 3, axis=2)


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into [0, n) by reflection about the
    array edges with edge repetition: -1 -> 0, n -> n-1 (period 2n)."""
    if n == 1:
        return np.zeros_like(idx)
    idx = np.mod(idx, 2 * n)
    return np.where(idx >= n, 2 * n - 1 - idx, idx)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with bilinear filtering, sampling at output pixel centers."""
    img = check_image(img)
    h, w = img.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _sample_bilinear(img, grid_y, grid_x)


def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at fractional (ys, xs) grids; out-of-range taps reflect."""
    h, w = img.shape[:2]
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).astype(np.float32)[:, :, None]
    wx = (xs - x0).astype(np.float32)[:, :, None]
    y0r, y1r = reflect_index(y0, h), reflect_index(y0 + 1, h)
    x0r, x1r = reflect_index(x0, w), reflect_index(x0 + 1, w)
    top = img[y0r, x0r] * (1 - wx) + img[y0r, x1r] * wx
    bot = img[y1r, x0r] * (1 - wx) + img[y1r, x1r] * wx
    return top * (1 - wy) + bot * wy


def rotate_bilinear(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center; bilinear taps, reflection fill."""
    img = check_image(img)
    if angle_deg == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse map: output pixel pulls from the source rotated the other way
    ys = cy + dy * cos_t - dx * sin_t
    xs = cx + dy * sin_t + dx * cos_t
    return _sample_bilinear(img, ys, xs)


def hflip(img: np.ndarray) -> np.ndarray:
    return check_image(img)[:, ::-1].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return check_image(img)[::-1].copy()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return (k / k.sum()).astype(np.float32)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with reflection padding.

    Padding repeats the edge sample (numpy's "symmetric"), which makes the
    filter exactly mean-preserving for any symmetric normalized kernel.
    """
    img = check_image(img)
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    out = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="symmetric")
    out = _conv_axis0(out, k)
    out = np.pad(out, ((0, 0), (r, r), (0, 0)), mode="symmetric")
    out = _conv_axis0(out.transpose(1, 0, 2), k).transpose(1, 0, 2)
    return np.clip(out, 0.0, 1.0)


def _conv_axis0(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid-mode correlation along axis 0 with a symmetric 1-D kernel."""
    n = img.shape[0] - len(k) + 1
    windows = np.lib.stride_tricks.sliding_window_view(img, len(k), axis=0)
    return (windows @ k)[:n]


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    img = check_image(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=2)
    minc = img.min(axis=2)
    delta = maxc - minc
    safe = np.where(delta == 0, 1.0, delta).astype(np.float32)
    h = np.zeros_like(maxc)
    rm = (maxc == r) & (delta > 0)
    gm = (maxc == g) & (delta > 0) & ~rm
    bm = (delta > 0) & ~rm & ~gm
    h = np.where(rm, ((g - b) / safe) % 6.0, h)
    h = np.where(gm, (b - r) / safe + 2.0, h)
    h = np.where(bm, (r - g) / safe + 4.0, h)
    h = (h / 6.0) % 1.0
    s = np.where(maxc == 0, 0.0, delta / np.where(maxc == 0, 1.0, maxc))
    return np.stack([h, s, maxc], axis=2).astype(np.float32)


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    img = check_image(img)
    h, s, v = img[..., 0], img[..., 1], img[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = (h6 - np.floor(h6)).astype(np.float32)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    lut = np.stack([
        np.stack([v, t, p], axis=2),
        np.stack([q, v, p], axis=2),
        np.stack([p, v, t], axis=2),
        np.stack([p, q, v], axis=2),
        np.stack([t, p, v], axis=2),
        np.stack([v, p, q], axis=2),
    ])
    hh, ww = h.shape
    out = lut[i, np.arange(hh)[:, None], np.arange(ww)[None, :]]
    return out.astype(np.float32)
