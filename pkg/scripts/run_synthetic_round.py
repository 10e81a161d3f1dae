#!/usr/bin/env python3
"""Build a synthetic ellipse suite and run one pseudo-label round on it with the mock model.

    python scripts/run_synthetic_round.py /tmp/ssl-demo [--images 20] [--seed 0] [--copies 1]
"""

import argparse
import json
import sys
from pathlib import Path

import yaml

from stenokit.pipeline import load_config, run_ssl_round
from stenokit.synthetic import make_suite

HERE = Path(__file__).resolve().parent


def write_config(root: Path, paths: dict, seed: int = 0, copies: int = 0, policy=None, workdir="work") -> Path:
    mock = HERE / "mock_model.py"
    cfg = {
        "stenosis_train_path": str(paths["stenosis"]),
        "vessel_path": str(paths["vessel"]),
        "validation_path": str(paths["validation"]),
        "train_command": f"{{python}} {mock} train --dataset {{dataset}} --output {{output}} --truth {paths['truth']}",
        "infer_command": f"{{python}} {mock} infer --model {{model}} --image {{image}} --output {{output}}",
        "threshold_policy": policy or {"sweep": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]},
        "augment_copies": copies,
        "resize_to": 64,
        "seed": seed,
        "time_limit": 5.0,
        "workdir": workdir,
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root", type=Path)
    p.add_argument("--images", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--copies", type=int, default=0)
    args = p.parse_args(argv)

    args.root = args.root.resolve()
    args.root.mkdir(parents=True, exist_ok=True)
    paths = make_suite(args.root / "data", args.images, args.seed)
    cfg_path = write_config(args.root, paths, args.seed, args.copies)
    manifest = run_ssl_round(load_config(cfg_path))
    print(json.dumps({k: manifest[k] for k in ("selected_threshold", "completed", "final_report_path")}, indent=1))
    print(manifest.stages["evaluate"]["summary"])
    return 0 if manifest["completed"] else 1


if __name__ == "__main__":
    sys.exit(main())
