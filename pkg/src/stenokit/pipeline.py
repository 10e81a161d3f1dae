"""One round of pseudo-label self-training, driven by external train/infer commands.

Stages, in order::

    train_stage1      train on the stenosis set
    infer_vessel      timed per-image inference on the vessel set
    select_threshold  fixed threshold, or a sweep on validation predictions
    build_pseudo      filter, assemble the pseudo set, merge with the stenosis set
    train_stage2      train on the merged set
    evaluate          timed inference on the validation set and scoring

Every stage reads its inputs from files written by earlier stages and records
its outputs in ``<workdir>/manifest.json``; a rerun with the same config skips
stages whose outputs are all still present.

Command templates are split with :func:`shlex.split` and each token is
formatted with these placeholders:

    train:  {dataset} {output}  required; {workdir} {seed} {python} optional
    infer:  {image} {output}    required; {model} {image_id} {workdir} {python} optional

``{output}`` for training is the model path the command must create. For
inference it is a JSON file holding ``{"annotations": [...]}`` with a
``segmentation`` and ``score`` per entry; ``id``, ``image_id`` and
``category_id`` are optional and get filled in.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .annotations import (
    HUMAN,
    PSEUDO,
    Dataset,
    DatasetError,
    ImageRecord,
    InstanceAnnotation,
    merge_with_id_map,
    parse_annotation,
    read_dataset,
    validate_dataset,
    write_dataset,
)
from .augmentation import (
    AugmentationError,
    AugmentationParams,
    augment_sample,
    gray_to_rgb,
    read_image,
    resize_homography,
    sample_transform,
    write_image,
)
from .evaluation import evaluate_submission, write_report
from .geometry import compose
from .pseudo_label import (
    DEFAULT_GRID,
    PredictionSet,
    build_pseudo_dataset,
    filter_predictions,
    read_predictions,
    sweep_threshold,
    write_predictions,
)

log = logging.getLogger(__name__)

STAGES = ("train_stage1", "infer_vessel", "select_threshold", "build_pseudo", "train_stage2", "evaluate")
ENV_WORKDIR = "STENOKIT_WORKDIR"
ENV_SEED = "STENOKIT_SEED"


class PipelineError(RuntimeError):
    pass


class ConfigError(PipelineError):
    pass


class CommandError(PipelineError):
    def __init__(self, message: str, returncode: int | None = None, output: str = ""):
        self.returncode = returncode
        self.output = output
        super().__init__(message if not output else f"{message}\n--- output ---\n{output[-4000:]}")


class IngestionError(PipelineError):
    pass


# --------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ThresholdPolicy:
    fixed: float | None = None
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.fixed is None) == (self.grid is None):
            raise ConfigError("threshold_policy needs exactly one of 'fixed' or 'sweep'")
        if self.fixed is not None and not 0.0 <= self.fixed <= 1.0:
            raise ConfigError(f"fixed threshold {self.fixed} outside [0, 1]")
        if self.grid is not None and not self.grid:
            raise ConfigError("sweep grid is empty")

    def to_dict(self) -> dict:
        return {"fixed": self.fixed} if self.fixed is not None else {"sweep": list(self.grid)}


@dataclass(frozen=True)
class PipelineConfig:
    stenosis_train_path: Path
    vessel_path: Path
    validation_path: Path
    train_command: str
    infer_command: str
    workdir: Path
    threshold_policy: ThresholdPolicy = field(default_factory=lambda: ThresholdPolicy(grid=DEFAULT_GRID))
    augmentation: AugmentationParams = field(default_factory=AugmentationParams)
    augment_copies: int = 0
    resize_to: int | None = 640
    seed: int = 0
    time_limit: float = 5.0
    workers: int = 1
    stenosis_images: Path | None = None
    vessel_images: Path | None = None
    validation_images: Path | None = None

    def image_root(self, which: str) -> Path:
        """Directory the ``file_name`` entries of dataset ``which`` resolve against."""
        root = getattr(self, f"{which}_images")
        if root is not None:
            return root
        return {"stenosis": self.stenosis_train_path, "vessel": self.vessel_path, "validation": self.validation_path}[which].parent

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, ThresholdPolicy):
                v = v.to_dict()
            elif isinstance(v, AugmentationParams):
                v = asdict(v)
            out[f.name] = v
        return out

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


_REQUIRED_PLACEHOLDERS = {"train_command": ("{dataset}", "{output}"), "infer_command": ("{image}", "{output}")}


def config_from_dict(raw: Mapping[str, Any], base_dir: Path = Path("."), env: Mapping[str, str] | None = None) -> PipelineConfig:
    """Build a config from parsed YAML; relative paths resolve against ``base_dir``."""
    env = os.environ if env is None else env
    raw = dict(raw)
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key in ("stenosis_train_path", "vessel_path", "validation_path", "train_command", "infer_command"):
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")

    if env.get(ENV_WORKDIR):
        raw["workdir"] = env[ENV_WORKDIR]
    if env.get(ENV_SEED):
        try:
            raw["seed"] = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    raw.setdefault("workdir", "work")

    def path(v):
        p = Path(v).expanduser()
        return (base_dir / p).resolve() if not p.is_absolute() else p

    for key in ("stenosis_train_path", "vessel_path", "validation_path", "workdir",
                "stenosis_images", "vessel_images", "validation_images"):
        if raw.get(key) is not None:
            raw[key] = path(raw[key])

    for key, needed in _REQUIRED_PLACEHOLDERS.items():
        tmpl = raw[key]
        if not isinstance(tmpl, str):
            raise ConfigError(f"{key} must be a string template")
        missing = [p for p in needed if p not in tmpl]
        if missing:
            raise ConfigError(f"{key} lacks placeholder(s) {', '.join(missing)}")

    pol = raw.get("threshold_policy")
    if pol is not None:
        if not isinstance(pol, dict) or len(pol) != 1 or not set(pol) <= {"fixed", "sweep"}:
            raise ConfigError("threshold_policy must be {fixed: value} or {sweep: [grid]}")
        if "fixed" in pol:
            raw["threshold_policy"] = ThresholdPolicy(fixed=float(pol["fixed"]))
        else:
            grid = pol["sweep"]
            grid = DEFAULT_GRID if grid in (None, "default") else tuple(float(t) for t in grid)
            raw["threshold_policy"] = ThresholdPolicy(grid=tuple(grid))

    aug = raw.get("augmentation")
    if aug is not None:
        try:
            raw["augmentation"] = AugmentationParams(**aug)
        except (TypeError, AugmentationError) as e:
            raise ConfigError(f"augmentation: {e}") from None

    try:
        cfg = PipelineConfig(**raw)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    if cfg.time_limit <= 0:
        raise ConfigError("time_limit must be > 0")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.augment_copies < 0:
        raise ConfigError("augment_copies must be >= 0")
    return cfg


def load_config(path, env: Mapping[str, str] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, path.parent.resolve(), env)


def check_paths(cfg: PipelineConfig) -> None:
    for key in ("stenosis_train_path", "vessel_path", "validation_path"):
        p = getattr(cfg, key)
        if not p.is_file():
            raise ConfigError(f"{key} does not exist: {p}")


# --------------------------------------------------------------------------
# external commands


def render_command(template: str, values: Mapping[str, Any]) -> list[str]:
    values = {"python": sys.executable, **{k: str(v) for k, v in values.items()}}
    try:
        return [tok.format_map(values) for tok in shlex.split(template)]
    except KeyError as e:
        raise ConfigError(f"unknown placeholder {e} in command {template!r}") from None
    except ValueError as e:
        raise ConfigError(f"bad command template {template!r}: {e}") from None


def run_command(argv: Sequence[str]) -> subprocess.CompletedProcess:
    try:
        proc = subprocess.run(argv, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    except OSError as e:
        raise CommandError(f"cannot execute {argv[0]!r}: {e}") from None
    if proc.returncode != 0:
        raise CommandError(f"command exited with {proc.returncode}: {shlex.join(argv)}", proc.returncode, proc.stdout)
    return proc


def _read_image_output(path: Path, image: ImageRecord) -> list[InstanceAnnotation]:
    try:
        doc = json.loads(path.read_bytes())
    except OSError as e:
        raise IngestionError(f"{path}: cannot read prediction output: {e}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise IngestionError(f"{path}: malformed prediction output: {e}") from None
    entries = doc.get("annotations") if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise IngestionError(f"{path}: expected an 'annotations' list")
    out = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict):
            raise IngestionError(f"{path}: annotation {k} is not an object")
        e = {"id": k + 1, "category_id": 1, **e, "image_id": image.id}
        try:
            out.append(parse_annotation(e, require_score=True, default_provenance=HUMAN))
        except DatasetError as err:
            raise IngestionError(f"{path}: {err}") from None
        a = out[-1]
        if not 0.0 <= a.score <= 1.0 or any(len(p) < 6 or len(p) % 2 for p in a.segmentation) or not a.segmentation:
            raise IngestionError(f"{path}: annotation {k} has an invalid score or polygon")
    return out


@dataclass
class TimedInference:
    predictions: PredictionSet
    timings: dict[int, float]
    failures: dict[int, str]
    approximate: bool = False


def time_predictor(
    infer_command: str,
    images: Sequence[ImageRecord],
    image_root: Path,
    out_dir: Path,
    model: str | os.PathLike | None = None,
    workers: int = 1,
    extra: Mapping[str, Any] | None = None,
) -> TimedInference:
    """Run the predictor once per image and time each call (wall clock, process included).

    A failing call is recorded in ``failures`` and leaves that image without
    predictions; it never aborts the batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(im: ImageRecord):
        out = out_dir / f"{im.id}.json"
        if out.exists():
            out.unlink()
        argv = render_command(
            infer_command,
            {**(extra or {}), "image": Path(image_root) / im.file_name, "output": out,
             "model": model or "", "image_id": im.id},
        )
        t0 = time.perf_counter()
        try:
            run_command(argv)
            err = None
        except CommandError as e:
            err = str(e)
        elapsed = time.perf_counter() - t0
        if err is not None:
            return elapsed, None, err
        try:
            return elapsed, _read_image_output(out, im), None
        except IngestionError as e:
            return elapsed, None, str(e)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, images))
    else:
        results = [one(im) for im in images]

    preds, timings, failures = [], {}, {}
    for im, (elapsed, anns, err) in zip(images, results):
        timings[im.id] = elapsed
        if err is not None:
            log.warning("inference failed on image %s: %s", im.id, err.splitlines()[0])
            failures[im.id] = err
            continue
        for a in anns:
            preds.append(replace(a, id=len(preds) + 1))
    pset = PredictionSet(
        images, preds, source_model=str(model or ""),
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    return TimedInference(pset, timings, failures, approximate=workers > 1)


# --------------------------------------------------------------------------
# datasets on disk


def rebase(d: Dataset, from_root: Path, to_root: Path) -> Dataset:
    """Rewrite image paths so they resolve relative to ``to_root``."""
    images = [
        replace(im, file_name=os.path.relpath(Path(from_root).resolve() / im.file_name, Path(to_root).resolve()))
        for im in d.images
    ]
    return replace(d, images=tuple(images))


def _variant_seed(seed: int, image_id: int, copy: int) -> int:
    return int(np.random.SeedSequence([seed, image_id, copy]).generate_state(1)[0])


def offline_augment(
    dataset: Dataset,
    params: AugmentationParams,
    copies: int,
    seed: int,
    image_root: Path,
    out_dir: Path,
    resize_to: int | None = None,
) -> Dataset:
    """Append ``copies`` augmented variants of every image to the dataset.

    Variant images are written under ``out_dir`` and referenced relative to
    ``image_root``; originals are kept untouched. Variants are resized to
    ``resize_to`` squared when given, inside the same warp.
    """
    if copies == 0:
        return dataset
    image_root, out_dir = Path(image_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_image = dataset.annotations_by_image()
    next_image = max((im.id for im in dataset.images), default=0) + 1
    next_ann = max((a.id for a in dataset.annotations), default=0) + 1
    images, annotations = list(dataset.images), list(dataset.annotations)
    for im in dataset.images:
        src_path = image_root / im.file_name
        try:
            raster = read_image(src_path)
        except (OSError, ValueError) as e:
            raise AugmentationError(f"cannot read image {src_path}: {e}") from None
        if raster.channels == 1:
            raster = gray_to_rgb(raster)
        for k in range(copies):
            spec = sample_transform(params, _variant_seed(seed, im.id, k), raster.width, raster.height)
            size = (raster.width, raster.height)
            if resize_to:
                spec = replace(spec, h=compose(spec.h, resize_homography(raster.width, raster.height, resize_to, resize_to)))
                size = (resize_to, resize_to)
            out_img, labels = augment_sample(raster, by_image.get(im.id, []), spec, params.min_instance_area, out_size=size)
            dst = out_dir / f"{Path(im.file_name).stem}_{im.id}_aug{k}.png"
            write_image(out_img, dst)
            images.append(ImageRecord(next_image, os.path.relpath(dst, image_root), size[0], size[1]))
            for a in labels:
                annotations.append(replace(a, id=next_ann, image_id=next_image))
                next_ann += 1
            next_image += 1
    return Dataset(images, annotations, dataset.categories)


# --------------------------------------------------------------------------
# the round


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _dataset_counts(d: Dataset) -> dict:
    return {
        "images": len(d.images),
        "annotations": len(d.annotations),
        "human": sum(a.provenance == HUMAN for a in d.annotations),
        "pseudo": sum(a.provenance == PSEUDO for a in d.annotations),
    }


class Manifest:
    def __init__(self, path: Path, config_hash: str):
        self.path = Path(path)
        self.data = {"config_hash": config_hash, "created_at": _now(), "stages": {}}
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == config_hash:
                self.data = old
            else:
                log.info("config changed, starting a fresh round in %s", self.path.parent)

    def done(self, stage: str) -> bool:
        rec = self.data["stages"].get(stage)
        if not rec or rec.get("status") != "done":
            return False
        return all(Path(p).exists() for p in rec.get("paths", {}).values())

    def record(self, stage: str, started: str, paths: Mapping[str, Path], **info) -> None:
        self.data["stages"][stage] = {
            "status": "done", "started": started, "finished": _now(),
            "paths": {k: str(v) for k, v in paths.items()}, **info,
        }
        self.save()

    def fail(self, stage: str, started: str, error: str) -> None:
        self.data["stages"][stage] = {"status": "failed", "started": started, "finished": _now(), "error": error}
        self.save()

    def paths(self, stage: str) -> dict[str, Path]:
        return {k: Path(v) for k, v in self.data["stages"][stage]["paths"].items()}

    def save(self) -> None:
        self.data["updated_at"] = _now()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=1) + "\n")
        tmp.replace(self.path)


@dataclass
class RunManifest:
    path: Path
    data: dict

    @property
    def stages(self) -> dict:
        return self.data["stages"]

    def __getitem__(self, key):
        return self.data[key]


def _train(cfg: PipelineConfig, dataset_path: Path, model_path: Path) -> Path:
    argv = render_command(
        cfg.train_command,
        {"dataset": dataset_path, "output": model_path, "workdir": cfg.workdir, "seed": cfg.seed},
    )
    run_command(argv)
    if not model_path.exists():
        raise CommandError(f"training finished but did not create {model_path}")
    return model_path


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_dataset_checked(path: Path) -> Dataset:
    try:
        return read_dataset(path)
    except DatasetError as e:
        raise IngestionError(f"{path}: {e}") from None


def run_ssl_round(cfg: PipelineConfig) -> RunManifest:
    check_paths(cfg)
    wd = cfg.workdir
    wd.mkdir(parents=True, exist_ok=True)
    m = Manifest(wd / "manifest.json", cfg.config_hash)
    m.data["config"] = cfg.to_dict()
    m.data["timing_protocol"] = {
        "clock": "wall (time.perf_counter)",
        "scope": "one predictor process per image, startup and I/O included",
        "workers": cfg.workers,
        "approximate": cfg.workers > 1,
    }
    m.save()
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    labeled = _read_dataset_checked(cfg.stenosis_train_path)
    vessel = _read_dataset_checked(cfg.vessel_path)
    val = _read_dataset_checked(cfg.validation_path)

    def stage(name, fn):
        if m.done(name):
            log.info("stage %s already done, skipping", name)
            return
        started = _now()
        log.info("stage %s", name)
        try:
            paths, info = fn()
        except Exception as e:
            m.fail(name, started, str(e))
            raise
        m.record(name, started, paths, **info)

    def train_stage1():
        d = wd / "stage1"
        d.mkdir(exist_ok=True)
        train = rebase(labeled, cfg.image_root("stenosis"), d)
        train = offline_augment(train, cfg.augmentation, cfg.augment_copies, int(seeds[0]), d, d / "aug", cfg.resize_to)
        write_dataset(train, d / "train.json")
        model = _train(cfg, d / "train.json", d / "model")
        return {"train_dataset": d / "train.json", "model": model}, {"train_counts": _dataset_counts(train)}

    def infer(model: Path, images, root: Path, out: Path, tag: str):
        res = time_predictor(cfg.infer_command, images, root, out / "raw", model, cfg.workers, {"workdir": wd})
        write_predictions(res.predictions, out / f"{tag}_predictions.json")
        _write_json({str(k): v for k, v in res.timings.items()}, out / f"{tag}_timings.json")
        _write_json({str(k): v for k, v in res.failures.items()}, out / f"{tag}_failures.json")
        paths = {
            "predictions": out / f"{tag}_predictions.json",
            "timings": out / f"{tag}_timings.json",
            "failures": out / f"{tag}_failures.json",
        }
        info = {"n_predictions": len(res.predictions.predictions), "failed_images": sorted(res.failures),
                "timing_approximate": res.approximate}
        return paths, info

    def infer_vessel():
        d = wd / "vessel_inference"
        return infer(m.paths("train_stage1")["model"], vessel.images, cfg.image_root("vessel"), d, "vessel")

    def select_threshold():
        d = wd / "threshold"
        d.mkdir(exist_ok=True)
        pol = cfg.threshold_policy
        if pol.fixed is not None:
            _write_json({"policy": "fixed", "selected": pol.fixed}, d / "threshold.json")
            return {"threshold": d / "threshold.json"}, {"selected": pol.fixed, "policy": "fixed"}
        paths, info = infer(m.paths("train_stage1")["model"], val.images, cfg.image_root("validation"), d, "validation")
        res = sweep_threshold(read_predictions(paths["predictions"]), val, pol.grid)
        (d / "sweep.csv").write_text(res.to_csv())
        _write_json({"policy": "sweep", "selected": res.selected, "objective": res.objective}, d / "threshold.json")
        paths.update({"threshold": d / "threshold.json", "sweep": d / "sweep.csv"})
        return paths, {"selected": res.selected, "policy": "sweep", "objective": res.objective, **info}

    def build_pseudo():
        d = wd / "pseudo"
        d.mkdir(exist_ok=True)
        tau = json.loads(m.paths("select_threshold")["threshold"].read_text())["selected"]
        preds_path = m.paths("infer_vessel")["predictions"]
        try:
            preds = read_predictions(preds_path)
        except DatasetError as e:
            raise IngestionError(f"{preds_path}: {e}") from None
        kept = filter_predictions(preds, tau)
        pseudo = build_pseudo_dataset(vessel.images, kept, preds.categories)
        pseudo = rebase(pseudo, cfg.image_root("vessel"), d)
        write_dataset(pseudo, d / "pseudo.json")

        merged, idmap = merge_with_id_map(rebase(labeled, cfg.image_root("stenosis"), d), pseudo)
        problems = validate_dataset(merged)
        if problems:
            raise IngestionError(f"merged dataset invalid: {problems[:3]}")
        write_dataset(merged, d / "merged.json")
        _write_json(idmap.to_dict(), d / "merged_idmap.json")
        counts = {"labeled": _dataset_counts(labeled), "pseudo": _dataset_counts(pseudo), "merged": _dataset_counts(merged)}
        return (
            {"pseudo_dataset": d / "pseudo.json", "merged_dataset": d / "merged.json", "id_map": d / "merged_idmap.json"},
            {"threshold": tau, "counts": counts},
        )

    def train_stage2():
        d = wd / "stage2"
        d.mkdir(exist_ok=True)
        merged_path = m.paths("build_pseudo")["merged_dataset"]
        train = rebase(_read_dataset_checked(merged_path), merged_path.parent, d)
        train = offline_augment(train, cfg.augmentation, cfg.augment_copies, int(seeds[1]), d, d / "aug", cfg.resize_to)
        write_dataset(train, d / "train.json")
        model = _train(cfg, d / "train.json", d / "model")
        return {"train_dataset": d / "train.json", "model": model}, {"train_counts": _dataset_counts(train)}

    def evaluate():
        d = wd / "evaluation"
        paths, info = infer(m.paths("train_stage2")["model"], val.images, cfg.image_root("validation"), d, "final")
        preds = read_predictions(paths["predictions"])
        timings = {int(k): v for k, v in json.loads(paths["timings"].read_text()).items()}
        report = evaluate_submission(val, preds, timings, cfg.time_limit)
        report = replace(report, notes={"timing_protocol": m.data["timing_protocol"], "failed_images": info["failed_images"]})
        write_report(report, d / "final_report.json")
        (d / "summary.txt").write_text(report.summary_line() + "\n")
        paths["report"] = d / "final_report.json"
        return paths, {**info, "mean_f1": report.mean_f1, "summary": report.summary_line()}

    try:
        stage("train_stage1", train_stage1)
        stage("infer_vessel", infer_vessel)
        stage("select_threshold", select_threshold)
        stage("build_pseudo", build_pseudo)
        stage("train_stage2", train_stage2)
        stage("evaluate", evaluate)
    finally:
        s = m.data["stages"]

        def get(st, k):
            return s.get(st, {}).get("paths", {}).get(k)

        m.data.update({
            "stage1_model_ref": get("train_stage1", "model"),
            "sweep_result": get("select_threshold", "sweep"),
            "selected_threshold": s.get("select_threshold", {}).get("selected"),
            "pseudo_dataset_path": get("build_pseudo", "pseudo_dataset"),
            "merged_dataset_path": get("build_pseudo", "merged_dataset"),
            "stage2_model_ref": get("train_stage2", "model"),
            "final_report_path": get("evaluate", "report"),
            "completed": all(s.get(st, {}).get("status") == "done" for st in STAGES),
        })
        m.save()
    return RunManifest(m.path, m.data)
