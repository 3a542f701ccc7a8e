"""Dataset plumbing: cell-centered crop extraction from tiles + instance
masks, manifest round-tripping, and a synthetic labeled dataset used for
desk-scale experiments.

A crop is cut by taking the instance's tight bounding box, scaling that box
about its center by a window factor (1.0 = box itself, 2.0 = double), clamping
to the tile, and bilinearly resizing to 32x32. The manifest records the tight
bounding box; the extraction window is provenance of the cut and is not
persisted.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .imageops import bilinear_resize, hsv_to_rgb
from .seeding import substream

MANIFEST_COLUMNS = ("crop_path", "tile_id", "instance_id", "x0", "y0", "x1", "y1", "label")
CROP_SIZE = 32


@dataclass
class TileRecord:
    """One tile: an RGB image, an integer instance mask, optional labels."""

    image_path: str
    mask_path: str
    tile_id: str
    labels: dict[int, int] | None = None


@dataclass
class CellCrop:
    pixels: np.ndarray                      # (32, 32, 3) float32 in [0, 1]
    tile_id: str
    instance_id: int
    bbox: tuple                             # (x0, y0, x1, y1), half-open pixel coords
    window: tuple | None = None             # extraction window, None when loaded back
    label: int | None = None


@dataclass
class CropDataset:
    crops: list = field(default_factory=list)
    class_names: list | None = None
    manifest_path: str | None = None

    def __len__(self):
        return len(self.crops)

    def labels(self) -> np.ndarray:
        if any(c.label is None for c in self.crops):
            raise ValueError("dataset has unlabeled crops")
        return np.array([c.label for c in self.crops], dtype=np.int64)

    def pixel_stack(self) -> np.ndarray:
        """All crops as one (N, 3, 32, 32) float32 batch (channels first)."""
        return np.stack([c.pixels.transpose(2, 0, 1) for c in self.crops])


def validate_dataset(ds: CropDataset) -> None:
    seen = set()
    for i, c in enumerate(ds.crops):
        if c.pixels.shape != (CROP_SIZE, CROP_SIZE, 3):
            raise ValueError(f"crop {i}: expected {CROP_SIZE}x{CROP_SIZE}x3 pixels, "
                             f"got {c.pixels.shape}")
        key = (c.tile_id, c.instance_id)
        if key in seen:
            raise ValueError(f"crop {i}: duplicate id {key}")
        seen.add(key)


# ---------------------------------------------------------------------------
# crop extraction


def scale_window(bbox: tuple, factor: float) -> tuple:
    """Scale a half-open box about its center; exact real arithmetic."""
    if factor <= 0:
        raise ValueError(f"window factor must be positive, got {factor}")
    x0, y0, x1, y1 = bbox
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half_w, half_h = (x1 - x0) * factor / 2.0, (y1 - y0) * factor / 2.0
    return (cx - half_w, cy - half_h, cx + half_w, cy + half_h)


def _load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        mask = np.asarray(im)
    if mask.ndim != 2:
        raise ValueError(f"mask {path} must be single-channel, got shape {mask.shape}")
    return mask.astype(np.int64)


def extract_crops(tile: TileRecord, window_factor: float,
                  out_size: int = CROP_SIZE) -> list:
    """One crop per nonempty mask instance, window-scaled and resized."""
    img = _load_image(tile.image_path)
    mask = _load_mask(tile.mask_path)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"tile {tile.tile_id}: image {img.shape[:2]} and mask "
                         f"{mask.shape} sizes differ")
    if np.any(mask < 0):
        raise ValueError(f"tile {tile.tile_id}: negative instance ids in mask")
    ids = [int(i) for i in np.unique(mask) if i > 0]
    if tile.labels:
        for missing in sorted(set(tile.labels) - set(ids)):
            warnings.warn(f"tile {tile.tile_id}: labeled instance {missing} "
                          f"has no mask pixels, skipping")
    h, w = mask.shape
    crops = []
    for inst in ids:
        ys, xs = np.nonzero(mask == inst)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        wx0, wy0, wx1, wy1 = scale_window(bbox, window_factor)
        ix0 = max(0, int(np.floor(wx0)))
        iy0 = max(0, int(np.floor(wy0)))
        ix1 = min(w, int(np.ceil(wx1)))
        iy1 = min(h, int(np.ceil(wy1)))
        if ix1 - ix0 < 2 or iy1 - iy0 < 2:
            warnings.warn(f"tile {tile.tile_id}: instance {inst} window collapsed "
                          f"to {(ix0, iy0, ix1, iy1)}, skipping")
            continue
        pixels = bilinear_resize(img[iy0:iy1, ix0:ix1], out_size, out_size)
        pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)
        label = tile.labels.get(inst) if tile.labels else None
        crops.append(CellCrop(pixels=pixels, tile_id=tile.tile_id, instance_id=inst,
                              bbox=bbox, window=(ix0, iy0, ix1, iy1), label=label))
    return crops


def read_label_sidecar(path) -> dict[int, int]:
    """Parse an (instance_id, class_id) CSV, with or without a header row."""
    labels: dict[int, int] = {}
    with open(path, newline="") as f:
        for row_no, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].startswith("#"):
                continue
            if row_no == 1 and not row[0].strip().lstrip("-").isdigit():
                continue  # header
            if len(row) != 2:
                raise ValueError(f"{path}: row {row_no}: expected 2 fields, got {len(row)}")
            labels[int(row[0])] = int(row[1])
    return labels


# ---------------------------------------------------------------------------
# manifest round trip


def quantize_pixels(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)


def write_manifest(ds: CropDataset, manifest_path) -> None:
    """Write crops as PNGs next to the manifest plus one strict CSV.

    Pixels are stored at 8-bit depth; crops whose values are already on the
    u8 grid (synthetic data, reloaded datasets) round-trip exactly.
    """
    validate_dataset(ds)
    manifest_path = Path(manifest_path)
    crop_dir = manifest_path.parent / "crops"
    crop_dir.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", newline="") as f:
        if ds.class_names:
            f.write(f"# class_names={','.join(ds.class_names)}\n")
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for c in ds.crops:
            rel = f"crops/{c.tile_id}_{c.instance_id:06d}.png"
            Image.fromarray(quantize_pixels(c.pixels)).save(manifest_path.parent / rel)
            writer.writerow([rel, c.tile_id, c.instance_id, *c.bbox,
                             "" if c.label is None else c.label])
    ds.manifest_path = str(manifest_path)


def read_manifest(manifest_path) -> CropDataset:
    manifest_path = Path(manifest_path)
    class_names = None
    crops = []
    with open(manifest_path, newline="") as f:
        header_seen = False
        for row_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "class_names":
                    class_names = value.split(",") if value else []
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if tuple(row) != MANIFEST_COLUMNS:
                    bad = [c for c in row if c not in MANIFEST_COLUMNS]
                    raise ValueError(f"{manifest_path}: row {row_no}: unknown column(s) "
                                     f"{bad or row}; expected {','.join(MANIFEST_COLUMNS)}")
                header_seen = True
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ValueError(f"{manifest_path}: row {row_no}: expected "
                                 f"{len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            crop_path = manifest_path.parent / row[0]
            if not crop_path.exists():
                raise FileNotFoundError(f"{manifest_path}: row {row_no}: missing crop "
                                        f"file {crop_path}")
            try:
                instance_id = int(row[2])
                bbox = tuple(int(v) for v in row[3:7])
                label = None if row[7] == "" else int(row[7])
            except ValueError as e:
                raise ValueError(f"{manifest_path}: row {row_no}: {e}") from None
            crops.append(CellCrop(pixels=_load_image(crop_path), tile_id=row[1],
                                  instance_id=instance_id, bbox=bbox, window=None,
                                  label=label))
        if not header_seen:
            raise ValueError(f"{manifest_path}: missing header row")
    ds = CropDataset(crops=crops, class_names=class_names,
                     manifest_path=str(manifest_path))
    validate_dataset(ds)
    return ds


# ---------------------------------------------------------------------------
# synthetic cells


def _class_style(class_id: int, n_classes: int) -> dict:
    """Per-class appearance bands. Adjacent classes overlap on purpose so no
    single cue is decisive: hue bands touch, shape and texture carry the rest."""
    spread = max(1, n_classes - 1)
    return {
        "hue": (0.55 + 0.12 * class_id) % 1.0,
        "ratio": 0.95 - 0.55 * class_id / spread,       # minor/major axis ratio
        "freq": 1.6 * (2.1 ** class_id),                # stripes per cell length
    }


def _synth_crop(rng: np.random.Generator, class_id: int, n_classes: int,
                size: int = CROP_SIZE) -> np.ndarray:
    style = _class_style(class_id, n_classes)
    base = np.array([0.87, 0.80, 0.84], dtype=np.float32)
    img = np.tile(base, (size, size, 1))
    img += rng.normal(0.0, 0.035, size=(size, size, 3)).astype(np.float32)

    a = rng.uniform(8.5, 12.5)                           # major semi-axis, px
    b = a * np.clip(style["ratio"] + rng.uniform(-0.06, 0.06), 0.15, 1.0)
    theta = rng.uniform(0.0, np.pi)
    cy = (size - 1) / 2.0 + rng.uniform(-2.5, 2.5)
    cx = (size - 1) / 2.0 + rng.uniform(-2.5, 2.5)
    hue = (style["hue"] + rng.uniform(-0.05, 0.05)) % 1.0
    sat = rng.uniform(0.45, 0.75)
    val = rng.uniform(0.40, 0.62)
    freq = style["freq"] * rng.uniform(0.85, 1.15)
    phase = rng.uniform(0.0, 2.0 * np.pi)

    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    radial = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    coverage = np.clip((1.0 - radial) * a * 0.8 + 0.5, 0.0, 1.0)  # ~1px soft edge

    stripes = 1.0 + 0.22 * np.sin(np.pi * freq * u / a + phase)
    hsv = np.zeros((size, size, 3), dtype=np.float32)
    hsv[..., 0] = hue
    hsv[..., 1] = sat
    hsv[..., 2] = np.clip(val * stripes, 0.0, 1.0)
    cell = hsv_to_rgb(hsv)
    cell += rng.normal(0.0, 0.02, size=cell.shape).astype(np.float32)

    out = coverage[..., None] * cell + (1.0 - coverage[..., None]) * img
    return quantize_pixels(np.clip(out, 0.0, 1.0)).astype(np.float32) / 255.0


def synth_dataset(n_per_class: int, n_classes: int, seed: int) -> CropDataset:
    """Balanced labeled toy cells: one ellipse per crop, class-specific hue
    band, eccentricity, and stripe frequency. Deterministic per seed; pixels
    are on the u8 grid so manifests round-trip exactly."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if n_per_class < 1:
        raise ValueError(f"need at least 1 crop per class, got {n_per_class}")
    rng = substream(seed, "synth")
    tile_id = f"synth{seed}"
    crops = []
    for idx in range(n_per_class * n_classes):
        class_id = idx % n_classes
        pixels = _synth_crop(rng, class_id, n_classes)
        crops.append(CellCrop(pixels=pixels, tile_id=tile_id, instance_id=idx + 1,
                              bbox=(0, 0, CROP_SIZE, CROP_SIZE), window=None,
                              label=class_id))
    return CropDataset(crops=crops,
                       class_names=[f"class_{i}" for i in range(n_classes)])
