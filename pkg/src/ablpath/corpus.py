"""Synthetic annotated corpus: one class-determining shape per image on a
noisy grey background, plus optional class-neutral speckle distractors.

A class is a (shape family, grey level) pair, so that a desk-scale
perceptron can tell the classes apart at any position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, ParameterError

SHAPE_FAMILIES = ("disc", "square", "cross", "ring", "triangle")

# each family is drawn at its own grey level on a mid-grey background
SHAPE_LEVELS = (0.95, 0.0, 0.75, 0.15, 0.6)
BACKGROUND_LEVEL = 0.4
NOISE_STD = 0.05
DIFFICULT_AREA_FRACTION = 0.04


@dataclass(frozen=True)
class AnnotatedSample:
    image: Image
    label: int
    object_box: tuple[int, int, int, int]  # (row0, col0, row1, col1), inclusive
    difficulty: str  # "simple" | "difficult"
    shape_area: int = 0
    distractors: int = 0

    def __post_init__(self):
        H, W = self.image.shape[:2]
        r0, c0, r1, c1 = self.object_box
        if not (0 <= r0 <= r1 < H and 0 <= c0 <= c1 < W):
            raise ValueError(f"object box {self.object_box} outside {H}x{W} grid")
        if self.difficulty not in ("simple", "difficult"):
            raise ValueError(f"unknown difficulty {self.difficulty!r}")

    def contains(self, row: int, col: int) -> bool:
        r0, c0, r1, c1 = self.object_box
        return r0 <= row <= r1 and c0 <= col <= c1


def shape_mask(family: str, H: int, W: int, cy: float, cx: float, size: float) -> np.ndarray:
    """Boolean pixel mask of a shape centred at (cy, cx) with half-extent ``size``."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if family == "disc":
        return dy**2 + dx**2 <= size**2
    if family == "square":
        return (np.abs(dy) <= size * 0.85) & (np.abs(dx) <= size * 0.85)
    if family == "cross":
        arm = max(size * 0.3, 0.75)
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= size)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= size))
    if family == "ring":
        r2 = dy**2 + dx**2
        return (r2 <= size**2) & (r2 >= (size * 0.55) ** 2)
    if family == "triangle":
        # apex up; base on the line dy = +size
        return (dy <= size * 0.8) & (dy >= -size) & (np.abs(dx) <= (dy + size) * 0.55)
    raise ValueError(f"unknown shape family {family!r}")


def _bounding_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def _one_sample(rng: np.random.Generator, H: int, W: int, K: int) -> AnnotatedSample:
    label = int(rng.integers(K))
    family = SHAPE_FAMILIES[label]
    lo = 3.0
    hi = max(lo + 0.5, min(H, W) / 4.5)
    size = float(rng.uniform(lo, hi))
    margin = size + 1.0
    cy = float(rng.uniform(margin, H - 1 - margin))
    cx = float(rng.uniform(margin, W - 1 - margin))
    mask = shape_mask(family, H, W, cy, cx, size)

    img = BACKGROUND_LEVEL + NOISE_STD * rng.standard_normal((H, W))
    img[mask] = SHAPE_LEVELS[label] + NOISE_STD * rng.standard_normal(int(mask.sum()))

    n_distract = int(rng.choice(3, p=(0.5, 0.3, 0.2)))
    placed = 0
    keepout = np.zeros((H, W), dtype=bool)
    r0, c0, r1, c1 = _bounding_box(mask)
    keepout[max(r0 - 1, 0) : r1 + 2, max(c0 - 1, 0) : c1 + 2] = True
    for _ in range(n_distract):
        for _attempt in range(20):
            side = int(rng.integers(3, 6))
            y = int(rng.integers(0, H - side + 1))
            x = int(rng.integers(0, W - side + 1))
            if keepout[y : y + side, x : x + side].any():
                continue
            img[y : y + side, x : x + side] = rng.uniform(0.0, 1.0, (side, side))
            keepout[max(y - 1, 0) : y + side + 1, max(x - 1, 0) : x + side + 1] = True
            placed += 1
            break

    area = int(mask.sum())
    difficult = area < DIFFICULT_AREA_FRACTION * H * W or placed > 0
    values = np.clip(img, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return AnnotatedSample(
        image=Image(values[:, :, None]),
        label=label,
        object_box=_bounding_box(mask),
        difficulty="difficult" if difficult else "simple",
        shape_area=area,
        distractors=placed,
    )


def generate_blob_corpus(seed: int, n: int, H: int = 32, W: int = 32, K: int = 3) -> list[AnnotatedSample]:
    """Deterministic corpus of ``n`` samples; a pure function of its arguments."""
    if not 2 <= K <= len(SHAPE_FAMILIES):
        raise ParameterError(f"K must be in 2..{len(SHAPE_FAMILIES)}, got {K}")
    if H < 16 or W < 16:
        raise ParameterError(f"grid must be at least 16x16, got {H}x{W}")
    rng = np.random.default_rng(seed)
    return [_one_sample(rng, H, W, K) for _ in range(n)]


def stack_images(samples: list[AnnotatedSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.image.values for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return X, y
