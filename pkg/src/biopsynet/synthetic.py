"""Synthetic desk-scale corpus: textured tissue stand-ins plus background.

Three class textures, pairwise distinguishable by gradient energy:
class 0 (EE) a high-frequency checker, class 1 (CD) diagonal stripes,
class 2 (Normal) low-frequency blobs. Background cells are near-white with
per-channel sigma < 2/255. Slides are grids of patch-size cells, each
either the slide's class texture or background, so the full pipeline
(patching, filtering, balancing, training, eval) can run end to end.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import CLASS_NAMES
from .imageio import write_image

# (dark tone, light tone) per class, loosely H&E-like
CLASS_TONES = (
    ((120, 60, 140), (230, 170, 200)),  # EE: checker
    ((200, 100, 150), (245, 205, 225)),  # CD: stripes
    ((170, 110, 170), (250, 225, 240)),  # Normal: blobs
)
CHECKER_CELL = 2
STRIPE_BAND = 6
BLOB_GRID = 5
TEXTURE_NOISE_SIGMA = 8.0
BACKGROUND_BASE = 248.0
BACKGROUND_SIGMA = 1.2


@dataclass
class SyntheticSpec:
    seed: int = 0
    slides_per_class: int = 8
    slide_grid: int = 4  # cells per slide side
    patch_size: int = 64
    tissue_fraction: float = 0.55


def _blend(mask: np.ndarray, tones) -> np.ndarray:
    dark = np.asarray(tones[0], dtype=np.float64)
    light = np.asarray(tones[1], dtype=np.float64)
    return mask[:, :, None] * dark + (1.0 - mask[:, :, None]) * light


def _bilinear_upsample(field: np.ndarray, size: int) -> np.ndarray:
    src_h, src_w = field.shape
    ys = np.linspace(0.0, src_h - 1.0, size)
    xs = np.linspace(0.0, src_w - 1.0, size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = field[np.ix_(y0, x0)]
    b = field[np.ix_(y0, x1)]
    c = field[np.ix_(y1, x0)]
    d = field[np.ix_(y1, x1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def texture_patch(class_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One textured patch for a class, with a random phase per call."""
    yy, xx = np.mgrid[0:size, 0:size]
    if class_index == 0:
        off_y, off_x = rng.integers(0, 2 * CHECKER_CELL, size=2)
        mask = (((yy + off_y) // CHECKER_CELL + (xx + off_x) // CHECKER_CELL) % 2
                ).astype(np.float64)
    elif class_index == 1:
        off = int(rng.integers(0, 2 * STRIPE_BAND))
        mask = (((yy + xx + off) // STRIPE_BAND) % 2).astype(np.float64)
    elif class_index == 2:
        field = _bilinear_upsample(rng.random((BLOB_GRID, BLOB_GRID)), size)
        lo, hi = field.min(), field.max()
        mask = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
    else:
        raise ValueError(f"unknown class index {class_index}")
    img = _blend(mask, CLASS_TONES[class_index])
    img += rng.normal(0.0, TEXTURE_NOISE_SIGMA, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def background_patch(size: int, rng: np.random.Generator) -> np.ndarray:
    img = BACKGROUND_BASE + rng.normal(0.0, BACKGROUND_SIGMA, size=(size, size, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def gradient_energy(image: np.ndarray) -> float:
    """Mean squared forward-difference magnitude of the gray image in [0,1]."""
    gray = np.asarray(image, dtype=np.float64).mean(axis=2) / 255.0
    gx = np.diff(gray, axis=1)
    gy = np.diff(gray, axis=0)
    return float((gx * gx).mean() + (gy * gy).mean())


def make_slide(class_index: int, spec: SyntheticSpec,
               rng: np.random.Generator) -> tuple:
    """One slide raster plus its per-cell tissue/background truth grid."""
    g, ps = spec.slide_grid, spec.patch_size
    slide = np.empty((g * ps, g * ps, 3), dtype=np.uint8)
    tissue = rng.random((g, g)) < spec.tissue_fraction
    # every slide carries both kinds so filtering always has work to do
    if tissue.all():
        tissue[0, 0] = False
    if not tissue.any():
        tissue[0, 0] = True
    for gy in range(g):
        for gx in range(g):
            cell = (texture_patch(class_index, ps, rng) if tissue[gy, gx]
                    else background_patch(ps, rng))
            slide[gy * ps : (gy + 1) * ps, gx * ps : (gx + 1) * ps] = cell
    return slide, tissue


def generate_synthetic(spec: SyntheticSpec, out_dir) -> list:
    """Write the slide corpus plus ground-truth CSVs; byte-identical per seed.

    Returns [(slide_id, class_label, slide_path)], and writes
    slides.csv (slide_id, class_label, file) and cells.csv
    (slide_id, grid_x, grid_y, kind) under out_dir.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    slide_rows = []
    cell_rows = []
    for class_index, label in enumerate(CLASS_NAMES):
        for i in range(spec.slides_per_class):
            slide_id = f"{label}_s{i:02d}"
            slide, tissue = make_slide(class_index, spec, rng)
            fname = f"{slide_id}.ppm"
            write_image(os.path.join(out_dir, fname), slide)
            slide_rows.append((slide_id, label, fname))
            for gy in range(spec.slide_grid):
                for gx in range(spec.slide_grid):
                    kind = "tissue" if tissue[gy, gx] else "background"
                    cell_rows.append((slide_id, gx, gy, kind))

    def _write_csv(name, header, rows):
        tmp = os.path.join(out_dir, name + ".tmp")
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, os.path.join(out_dir, name))

    _write_csv("slides.csv", ["slide_id", "class_label", "file"], slide_rows)
    _write_csv("cells.csv", ["slide_id", "grid_x", "grid_y", "kind"], cell_rows)
    return [(sid, label, os.path.join(out_dir, fname))
            for sid, label, fname in slide_rows]


def read_slide_index(slides_dir) -> list:
    """Load slides.csv from a corpus directory."""
    path = os.path.join(slides_dir, "slides.csv")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["slide_id", "class_label", "file"]:
            raise ValueError(f"bad slides.csv header: {header!r}")
        return [(row[0], row[1], os.path.join(slides_dir, row[2]))
                for row in reader]
