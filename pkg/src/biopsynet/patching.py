"""Split whole-slide rasters into fixed-size labeled patches."""

from collections import defaultdict

import numpy as np

from .manifest import PatchRecord


def patch_id_for(slide_id: str, grid_x: int, grid_y: int) -> str:
    return f"{slide_id}_x{grid_x}_y{grid_y}"


def extract_patches(slide: np.ndarray, patch_size: int, slide_id: str,
                    class_label: str) -> list:
    """Non-overlapping row-major grid crops from the top-left corner.

    Border strips narrower than patch_size are discarded. Returns
    [(PatchRecord, patch_image), ...] with patch count
    floor(W/ps) * floor(H/ps).
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    h, w = slide.shape[:2]
    if h < patch_size or w < patch_size:
        raise ValueError(
            f"slide {slide_id!r} is {w}x{h}, smaller than one "
            f"{patch_size}x{patch_size} patch"
        )
    out = []
    for gy in range(h // patch_size):
        for gx in range(w // patch_size):
            y0 = gy * patch_size
            x0 = gx * patch_size
            crop = slide[y0 : y0 + patch_size, x0 : x0 + patch_size].copy()
            rec = PatchRecord(
                patch_id=patch_id_for(slide_id, gx, gy),
                slide_id=slide_id,
                class_label=class_label,
                grid_x=gx,
                grid_y=gy,
            )
            out.append((rec, crop))
    return out


def assign_split(records, test_fraction: float, seed: int) -> list:
    """Assign train/test at the slide level so no slide leaks across splits.

    Per class, round(test_fraction * n_slides) slides (at least 1, at most
    n_slides - 1) go to test, chosen by a seeded shuffle. Deterministic for
    a fixed seed.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    slides_by_class = defaultdict(list)
    class_by_slide = {}
    for rec in records:
        if rec.slide_id not in class_by_slide:
            class_by_slide[rec.slide_id] = rec.class_label
            slides_by_class[rec.class_label].append(rec.slide_id)

    test_slides = set()
    rng = np.random.default_rng(seed)
    for label in sorted(slides_by_class):
        slides = slides_by_class[label]
        if len(slides) < 2:
            raise ValueError(
                f"class {label!r} has only {len(slides)} slide(s); "
                f"need at least 2 to split"
            )
        n_test = int(round(test_fraction * len(slides)))
        n_test = min(max(n_test, 1), len(slides) - 1)
        order = rng.permutation(len(slides))
        test_slides.update(slides[i] for i in order[:n_test])

    return [
        rec.with_split("test" if rec.slide_id in test_slides else "train")
        for rec in records
    ]
