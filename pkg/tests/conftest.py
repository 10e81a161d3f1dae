import sys
from pathlib import Path

import numpy as np
import pytest

from stenokit.annotations import Category, Dataset, ImageRecord, InstanceAnnotation

ROOT = Path(__file__).resolve().parents[1]
SCRIPTS = ROOT / "scripts"
sys.path.insert(0, str(Path(__file__).resolve().parent))
sys.path.insert(0, str(SCRIPTS))

_acceptance = []


def random_dataset(rng: np.random.Generator, n_images=None, provenance="human", prefix="img", scores=False) -> Dataset:
    n_images = int(rng.integers(0, 6)) if n_images is None else n_images
    images, anns = [], []
    for i in range(n_images):
        w, h = int(rng.integers(8, 600)), int(rng.integers(8, 600))
        images.append(ImageRecord(i + 1, f"{prefix}/{i + 1:04d}.png", w, h))
        for _ in range(int(rng.integers(0, 4))):
            polys = []
            for _ in range(int(rng.integers(1, 3))):
                n = int(rng.integers(3, 9))
                pts = rng.uniform(0, [w, h], size=(n, 2))
                polys.append(tuple(float(c) for c in pts.reshape(-1)))
            anns.append(
                InstanceAnnotation(
                    len(anns) + 1,
                    i + 1,
                    1,
                    tuple(polys),
                    score=float(rng.uniform()) if scores else None,
                    provenance=provenance,
                )
            )
    return Dataset(images, anns, [Category(1, "stenosis")])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, dur in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}  ({dur:.1f}s)")
