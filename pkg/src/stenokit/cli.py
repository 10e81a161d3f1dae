"""Command line entry point.

Exit codes: 0 success, 1 validation or evaluation failure, 2 configuration
error, 3 external-command failure.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .annotations import DatasetError, merge_with_id_map, read_dataset, validate_dataset, write_dataset
from .annotations import ParseError, ValidationError, parse_dataset
from .augmentation import AugmentationError, AugmentationParams, augment_sample, gray_to_rgb, preview_panel, read_image, sample_transform
from .evaluation import EvaluationError, compare_leaderboard, evaluate_submission, read_report, write_report
from .geometry import GeometryError
from .pipeline import (
    ENV_SEED,
    CommandError,
    ConfigError,
    IngestionError,
    load_config,
    offline_augment,
    rebase,
    run_ssl_round,
)
from .pseudo_label import (
    DEFAULT_GRID,
    PseudoLabelError,
    build_pseudo_dataset,
    filter_predictions,
    read_predictions,
    sweep_threshold,
)

EXIT_FAIL, EXIT_CONFIG, EXIT_COMMAND = 1, 2, 3


def _fail(msg: str, code: int = EXIT_FAIL):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _load(path, reader=read_dataset):
    try:
        return reader(path)
    except OSError as e:
        _fail(f"{path}: {e}")
    except DatasetError as e:
        _fail(f"{path}: {e}")
    except PseudoLabelError as e:
        _fail(f"{path}: {e}")


def _seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get(ENV_SEED)
    return int(env) if env else 0


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging.")
def main(verbose):
    """Stenosis segmentation data, pseudo-labelling and scoring tools."""
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
def validate(dataset):
    """Check a COCO-style annotation file."""
    try:
        raw = Path(dataset).read_bytes()
    except OSError as e:
        _fail(str(e))
    try:
        d = parse_dataset(raw)
    except ParseError as e:
        _fail(f"{dataset}: {e}")
    except ValidationError as e:
        for v in e.violations:
            click.echo(str(v))
        _fail(f"{dataset}: {len(e.violations)} violation(s)")
    problems = validate_dataset(d)
    for v in problems:
        click.echo(str(v))
    if problems:
        sys.exit(EXIT_FAIL)
    click.echo(f"ok: {len(d.images)} images, {len(d.annotations)} annotations, {len(d.categories)} categories")


@main.command()
@click.argument("a", type=click.Path(dir_okay=False))
@click.argument("b", type=click.Path(dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--id-map", type=click.Path(dir_okay=False), help="Where to write the old-to-new id map (default: <output>.idmap.json).")
def merge(a, b, output, id_map):
    """Merge a labeled dataset A with a pseudo-labeled dataset B."""
    da, db = _load(a), _load(b)
    try:
        merged, idmap = merge_with_id_map(da, db)
    except DatasetError as e:
        _fail(str(e))
    write_dataset(merged, output)
    id_map = id_map or str(Path(output).with_suffix("")) + ".idmap.json"
    Path(id_map).write_text(json.dumps(idmap.to_dict(), indent=1) + "\n")
    click.echo(f"merged {len(merged.images)} images, {len(merged.annotations)} annotations -> {output}")


@main.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--copies", default=1, show_default=True, type=click.IntRange(min=0))
@click.option("--seed", type=int, default=None, help=f"Random seed (env {ENV_SEED}, default 0).")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--image-root", type=click.Path(file_okay=False), help="Directory image file_names are relative to (default: the dataset's directory).")
@click.option("--resize", type=int, default=None, help="Resize variants to NxN.")
def augment(dataset, copies, seed, output, image_root, resize):
    """Append augmented copies of every image; variants go next to OUTPUT."""
    d = _load(dataset)
    root = Path(image_root) if image_root else Path(dataset).resolve().parent
    out = Path(output).resolve()
    try:
        res = offline_augment(d, AugmentationParams(), copies, _seed(seed), root, out.parent / f"{out.stem}_images", resize)
    except (AugmentationError, GeometryError) as e:
        _fail(str(e))
    # output file_names resolve relative to the output file
    write_dataset(rebase(res, root, out.parent), out)
    click.echo(f"{len(d.images)} -> {len(res.images)} images -> {output}")


@main.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.argument("image_id", type=int)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--image-root", type=click.Path(file_okay=False))
def preview(dataset, image_id, seed, output, image_root):
    """Write original and augmented versions of one image side by side."""
    d = _load(dataset)
    root = Path(image_root) if image_root else Path(dataset).resolve().parent
    images = d.image_by_id()
    if image_id not in images:
        _fail(f"no image {image_id} in {dataset}")
    im = images[image_id]
    try:
        raster = read_image(root / im.file_name)
    except OSError as e:
        _fail(f"cannot read image {root / im.file_name}: {e}")
    if raster.channels == 1:
        raster = gray_to_rgb(raster)
    params = AugmentationParams()
    spec = sample_transform(params, _seed(seed), raster.width, raster.height)
    anns = d.annotations_by_image().get(image_id, [])
    aug, aug_anns = augment_sample(raster, anns, spec, params.min_instance_area)
    preview_panel(raster, anns, aug, aug_anns, output)
    click.echo(f"wrote {output}")


@main.group()
def pseudo():
    """Pseudo-label filtering and threshold selection."""


@pseudo.command("filter")
@click.argument("preds", type=click.Path(dir_okay=False))
@click.option("--tau", required=True, type=float)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def pseudo_filter(preds, tau, output):
    """Keep predictions scoring >= TAU and write them as a pseudo-labeled dataset."""
    p = _load(preds, read_predictions)
    try:
        kept = filter_predictions(p, tau)
    except PseudoLabelError as e:
        _fail(str(e), EXIT_CONFIG)
    d = build_pseudo_dataset(p.images, kept, p.categories)
    write_dataset(d, output)
    click.echo(f"kept {len(kept)}/{len(p.predictions)} predictions on {len(d.images)} images -> {output}")


def _grid(ctx, param, value):
    if value is None:
        return DEFAULT_GRID
    try:
        return tuple(float(t) for t in value.replace(",", " ").split())
    except ValueError:
        raise click.BadParameter("expected numbers separated by commas") from None


@pseudo.command("sweep")
@click.argument("preds", type=click.Path(dir_okay=False))
@click.argument("val_gt", type=click.Path(dir_okay=False))
@click.option("--grid", callback=_grid, help="Thresholds, e.g. 0.1,0.2,0.3 (default 0.05..0.95 by 0.05).")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def pseudo_sweep(preds, val_gt, grid, output):
    """Score a grid of thresholds on validation predictions; write a CSV report."""
    p = _load(preds, read_predictions)
    gt = _load(val_gt)
    try:
        res = sweep_threshold(p, gt, grid)
    except PseudoLabelError as e:
        _fail(str(e), EXIT_CONFIG)
    except EvaluationError as e:
        _fail(str(e))
    Path(output).write_text(res.to_csv())
    click.echo(f"selected={res.selected!r}")


@main.command("eval")
@click.argument("gt", type=click.Path(dir_okay=False))
@click.argument("preds", type=click.Path(dir_okay=False))
@click.option("--timings", type=click.Path(dir_okay=False), help="JSON object image_id -> seconds.")
@click.option("--limit", default=5.0, show_default=True, type=float)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def eval_(gt, preds, timings, limit, output):
    """Score predictions against ground truth."""
    g = _load(gt)
    p = _load(preds, read_predictions)
    t = None
    if timings:
        try:
            t = {int(k): float(v) for k, v in json.loads(Path(timings).read_text()).items()}
        except (OSError, ValueError, AttributeError) as e:
            _fail(f"{timings}: {e}", EXIT_CONFIG)
    try:
        report = evaluate_submission(g, p, t, limit)
    except (EvaluationError, GeometryError) as e:
        _fail(str(e))
    write_report(report, output)
    click.echo(report.summary_line())


@main.command()
@click.argument("report_a", type=click.Path(dir_okay=False))
@click.argument("report_b", type=click.Path(dir_okay=False))
def compare(report_a, report_b):
    """Rank two evaluation reports by the leaderboard rule."""
    try:
        a, b = read_report(report_a), read_report(report_b)
    except (OSError, ValueError, KeyError) as e:
        _fail(f"cannot read report: {e}")
    c = compare_leaderboard(a, b)
    click.echo({-1: f"A wins: {report_a}", 1: f"B wins: {report_b}", 0: "tie"}[c])


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
def run(config):
    """Run one full pseudo-label round from a YAML config."""
    try:
        cfg = load_config(config)
        manifest = run_ssl_round(cfg)
    except ConfigError as e:
        _fail(str(e), EXIT_CONFIG)
    except CommandError as e:
        _fail(str(e), EXIT_COMMAND)
    except (IngestionError, DatasetError, EvaluationError, GeometryError, AugmentationError, PseudoLabelError) as e:
        _fail(str(e))
    s = manifest.stages.get("evaluate", {})
    click.echo(s.get("summary", "done"))
    click.echo(f"manifest: {manifest.path}")


if __name__ == "__main__":
    main()
