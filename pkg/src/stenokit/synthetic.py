"""Synthetic angiogram-like datasets: dark background, bright ellipse instances.

Instances sit in distinct cells of a 2x2 grid so that no two overlap, which
keeps greedy instance matching provably optimal on these fixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import Category, Dataset, ImageRecord, InstanceAnnotation, make_segmentation, write_dataset
from .augmentation import RasterImage, write_image
from .geometry import rasterize

GRID = 2


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float  # degrees

    def polygon(self, n: int = 16) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        a = np.deg2rad(self.angle)
        x, y = self.rx * np.cos(t), self.ry * np.sin(t)
        return np.stack(
            [self.cx + x * np.cos(a) - y * np.sin(a), self.cy + x * np.sin(a) + y * np.cos(a)], axis=1
        )


def cell_center(cell: int, size: int) -> tuple[float, float]:
    step = size / GRID
    return (cell % GRID + 0.5) * step, (cell // GRID + 0.5) * step


def random_ellipse(rng: np.random.Generator, cell: int, size: int) -> Ellipse:
    cx, cy = cell_center(cell, size)
    r_max = size / GRID / 2 - 3
    return Ellipse(
        cx + rng.uniform(-2, 2),
        cy + rng.uniform(-2, 2),
        rng.uniform(0.45, 0.9) * r_max,
        rng.uniform(0.3, 0.6) * r_max,
        rng.uniform(0, 180),
    )


def draw(ellipses, size: int, rng: np.random.Generator) -> RasterImage:
    img = rng.normal(40, 8, (size, size))
    for e in ellipses:
        img[rasterize([e.polygon()], size, size).bits] += 150
    return RasterImage.from_array(np.clip(img, 0, 255).astype(np.uint8))


def make_split(
    out_dir: Path, prefix: str, n_images: int, seed: int, size: int = 64, labeled: bool = True
) -> tuple[Dataset, dict[str, list[dict]]]:
    """Write ``n_images`` PNGs plus annotations; returns the dataset and the hidden truth."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    images, anns, truth = [], [], {}
    for i in range(1, n_images + 1):
        k = int(rng.integers(1, GRID * GRID))
        cells = rng.choice(GRID * GRID, size=k, replace=False)
        ellipses = [random_ellipse(rng, int(c), size) for c in sorted(cells)]
        name = f"{prefix}_{i:03d}.png"
        write_image(draw(ellipses, size, rng), out_dir / "images" / name)
        images.append(ImageRecord(i, f"images/{name}", size, size))
        truth[name] = [e.__dict__ | {"cell": int(c)} for e, c in zip(ellipses, sorted(cells))]
        if labeled:
            for e in ellipses:
                anns.append(InstanceAnnotation(len(anns) + 1, i, 1, make_segmentation([e.polygon()])))
    d = Dataset(images, anns, [Category(1, "stenosis")])
    write_dataset(d, out_dir / f"{prefix}.json")
    return d, truth


def make_suite(root: Path, n_images: int = 20, seed: int = 0, size: int = 64) -> dict[str, Path]:
    """Stenosis-train, vessel (unlabeled) and validation splits plus ``truth.json``."""
    root = Path(root)
    truth = {}
    paths = {}
    for k, (prefix, labeled) in enumerate((("stenosis", True), ("vessel", False), ("validation", True))):
        _, t = make_split(root / prefix, prefix, n_images, seed * 10 + k, size, labeled)
        truth.update(t)
        paths[prefix] = root / prefix / f"{prefix}.json"
    (root / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    paths["truth"] = root / "truth.json"
    return paths
