#!/usr/bin/env python3
"""Scripted stand-in for a segmentation trainer/predictor.

    mock_model.py train --dataset D --output M --truth T
    mock_model.py infer --model M --image I --output O [--sleep S] [--fail-on NAME]

``train`` writes a small JSON "model" recording how many human and pseudo
instances it saw. ``infer`` looks the image up in the hidden truth file and
emits jittered ellipses with confidence scores, plus one low-score false
positive in an empty grid cell. Models trained on more instances jitter
less. Everything is deterministic in (model, image name).
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from stenokit.annotations import read_dataset
from stenokit.synthetic import GRID, Ellipse, cell_center


def _rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def train(args):
    d = read_dataset(args.dataset)
    model = {
        "truth": str(Path(args.truth).resolve()),
        "n_human": sum(a.provenance == "human" for a in d.annotations),
        "n_pseudo": sum(a.provenance == "pseudo" for a in d.annotations),
        "n_images": len(d.images),
    }
    Path(args.output).write_text(json.dumps(model, sort_keys=True) + "\n")


def infer(args):
    name = Path(args.image).name
    if args.fail_on and args.fail_on in name:
        print(f"simulated failure on {name}", file=sys.stderr)
        sys.exit(1)
    if args.sleep:
        time.sleep(args.sleep)
    model = json.loads(Path(args.model).read_text())
    truth = json.loads(Path(model["truth"]).read_text())[name]
    n_seen = model["n_human"] + 0.5 * model["n_pseudo"]
    jitter = 3.0 / (1.0 + n_seen / 30.0)
    rng = _rng(args.model_tag or model["n_human"], model["n_pseudo"], name)

    size = 64
    out = []
    used = set()
    for t in truth:
        used.add(t["cell"])
        if rng.uniform() < 0.1:
            continue  # missed instance
        e = Ellipse(
            t["cx"] + rng.normal(0, jitter * 0.5),
            t["cy"] + rng.normal(0, jitter * 0.5),
            max(1.5, t["rx"] + rng.normal(0, jitter)),
            max(1.5, t["ry"] + rng.normal(0, jitter)),
            t["angle"],
        )
        out.append({"segmentation": [e.polygon().reshape(-1).round(3).tolist()], "score": round(float(rng.uniform(0.5, 0.97)), 3)})
    free = [c for c in range(GRID * GRID) if c not in used]
    if free:
        cx, cy = cell_center(free[0], size)
        e = Ellipse(cx, cy, 5.0, 3.0, float(rng.uniform(0, 180)))
        out.append({"segmentation": [e.polygon().reshape(-1).round(3).tolist()], "score": round(float(rng.uniform(0.1, 0.45)), 3)})
    Path(args.output).write_text(json.dumps({"annotations": out}) + "\n")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    t = sub.add_parser("train")
    t.add_argument("--dataset", required=True)
    t.add_argument("--output", required=True)
    t.add_argument("--truth", required=True)
    i = sub.add_parser("infer")
    i.add_argument("--model", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--sleep", type=float, default=0.0)
    i.add_argument("--fail-on", default="")
    i.add_argument("--model-tag", default="")
    args = p.parse_args(argv)
    {"train": train, "infer": infer}[args.cmd](args)


if __name__ == "__main__":
    main()
