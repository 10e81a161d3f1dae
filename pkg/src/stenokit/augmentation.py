"""Label-preserving geometric and HSV augmentation.

One draw (:class:`TransformSpec`) folds flips, perspective, rotation, scale,
shear and translation into a single homography so the image is resampled
once and polygons are mapped by the very same matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .annotations import InstanceAnnotation, make_segmentation
from .geometry import (
    Homography,
    apply_homography,
    clip_polygon,
    compose,
    compose_all,
    polygon_area,
)


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationParams:
    """Sampling ranges; the defaults are the training recipe's values."""

    p_vflip: float = 0.5
    p_hflip: float = 0.5
    translate: float = 0.3  # fraction of each side
    rotation: float = 30.0  # degrees
    scale: float = 0.5  # gain drawn from [1 - scale, 1 + scale]
    shear: float = 5.0  # degrees
    perspective: float = 0.001
    hue: float = 0.015  # fraction of the hue circle
    saturation: float = 0.7
    value: float = 0.4
    min_instance_area: float = 4.0

    def __post_init__(self):
        for name in ("p_vflip", "p_hflip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AugmentationError(f"{name}={v} is not a probability")
        for name in ("translate", "rotation", "scale", "shear", "perspective", "hue", "saturation", "value", "min_instance_area"):
            if getattr(self, name) < 0:
                raise AugmentationError(f"{name} must be >= 0")

    @classmethod
    def none(cls) -> "AugmentationParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class TransformSpec:
    vflip: bool
    hflip: bool
    h: Homography
    hue_shift: float = 0.0
    sat_gain: float = 1.0
    val_gain: float = 1.0
    seed: int | None = None
    # raw draws, kept for auditing
    angle: float = 0.0
    scale: float = 1.0
    shear_x: float = 0.0
    shear_y: float = 0.0
    persp_x: float = 0.0
    persp_y: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "TransformSpec":
        return cls(False, False, Homography.identity())


@dataclass(frozen=True, eq=False)
class RasterImage:
    width: int
    height: int
    channels: int
    samples: np.ndarray  # uint8, (height, width, channels)

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.dtype != np.uint8:
            raise AugmentationError(f"samples must be uint8, got {s.dtype}")
        if self.channels not in (1, 3):
            raise AugmentationError(f"channels must be 1 or 3, got {self.channels}")
        if s.size != self.width * self.height * self.channels:
            raise AugmentationError("sample count does not match width x height x channels")
        object.__setattr__(self, "samples", s.reshape(self.height, self.width, self.channels))

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return (self.width, self.height, self.channels) == (other.width, other.height, other.channels) and bool(
            np.array_equal(self.samples, other.samples)
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, arr)


# --------------------------------------------------------------------------
# sampling


def build_homography(
    width: float,
    height: float,
    *,
    angle: float = 0.0,
    scale: float = 1.0,
    shear_x: float = 0.0,
    shear_y: float = 0.0,
    persp_x: float = 0.0,
    persp_y: float = 0.0,
    hflip: bool = False,
    vflip: bool = False,
    tx: float = 0.0,
    ty: float = 0.0,
) -> Homography:
    """Single matrix for: center to origin, perspective, rotation and scale,
    shear, flips, translation, back to center (plus the ``tx, ty`` offset).

    Angles are in degrees; ``tx``/``ty`` in pixels.
    """
    cx, cy = width / 2.0, height / 2.0
    persp = np.eye(3)
    persp[2, 0], persp[2, 1] = persp_x, persp_y
    shear = np.eye(3)
    shear[0, 1] = np.tan(np.deg2rad(shear_x))
    shear[1, 0] = np.tan(np.deg2rad(shear_y))
    flip = np.diag([-1.0 if hflip else 1.0, -1.0 if vflip else 1.0, 1.0])
    rot_scale = compose(Homography.rotation(angle), Homography.scaling(scale))
    return compose_all(
        [
            Homography.translation(-cx, -cy),
            Homography(persp),
            rot_scale,
            Homography(shear),
            Homography(flip),
            Homography.translation(cx + tx, cy + ty),
        ]
    )


def sample_transform(params: AugmentationParams, rng_seed: int, width: int, height: int) -> TransformSpec:
    rng = np.random.default_rng(rng_seed)
    u = rng.uniform
    # fixed draw order; all draws happen even for zero ranges
    vflip = bool(u() < params.p_vflip)
    hflip = bool(u() < params.p_hflip)
    persp_x = u(-params.perspective, params.perspective)
    persp_y = u(-params.perspective, params.perspective)
    angle = u(-params.rotation, params.rotation)
    scale = u(1.0 - params.scale, 1.0 + params.scale)
    shear_x = u(-params.shear, params.shear)
    shear_y = u(-params.shear, params.shear)
    tx = u(-params.translate, params.translate) * width
    ty = u(-params.translate, params.translate) * height
    hue_shift = u(-params.hue, params.hue)
    sat_gain = u(1.0 - params.saturation, 1.0 + params.saturation)
    val_gain = u(1.0 - params.value, 1.0 + params.value)
    h = build_homography(
        width, height, angle=angle, scale=scale, shear_x=shear_x, shear_y=shear_y,
        persp_x=persp_x, persp_y=persp_y, hflip=hflip, vflip=vflip, tx=tx, ty=ty,
    )
    return TransformSpec(
        vflip, hflip, h, float(hue_shift), float(sat_gain), float(val_gain), int(rng_seed),
        float(angle), float(scale), float(shear_x), float(shear_y),
        float(persp_x), float(persp_y), float(tx), float(ty),
    )


# --------------------------------------------------------------------------
# pixels


def gray_to_rgb(image: RasterImage) -> RasterImage:
    if image.channels != 1:
        raise AugmentationError(f"expected a single-channel image, got {image.channels} channels")
    return RasterImage(image.width, image.height, 3, np.repeat(image.samples, 3, axis=2))


def warp_image(
    image: RasterImage,
    h: Homography,
    out_size: tuple[int, int] | None = None,
    interpolation: str = "bilinear",
) -> RasterImage:
    """Resample ``image`` under ``h`` (source to destination), black outside the source."""
    ow, oh = out_size if out_size is not None else (image.width, image.height)
    inv = h.inverse().m
    jj, ii = np.mgrid[0:oh, 0:ow]
    x = ii.astype(np.float64) + 0.5
    y = jj.astype(np.float64) + 0.5
    w = inv[2, 0] * x + inv[2, 1] * y + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]) / w - 0.5
        sy = (inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]) / w - 0.5
    bad = ~np.isfinite(sx) | ~np.isfinite(sy) | (w <= 0)
    sx = np.where(bad, -10.0, sx)
    sy = np.where(bad, -10.0, sy)

    src = image.samples.astype(np.float64)
    H, W = image.height, image.width

    def fetch(xi, yi):
        ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        out = src[np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1)]
        return np.where(ok[..., None], out, 0.0)

    if interpolation == "nearest":
        val = fetch(np.floor(sx + 0.5).astype(np.int64), np.floor(sy + 0.5).astype(np.int64))
    elif interpolation == "bilinear":
        x0 = np.floor(sx)
        y0 = np.floor(sy)
        fx = (sx - x0)[..., None]
        fy = (sy - y0)[..., None]
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        val = (
            fetch(x0, y0) * (1 - fx) * (1 - fy)
            + fetch(x0 + 1, y0) * fx * (1 - fy)
            + fetch(x0, y0 + 1) * (1 - fx) * fy
            + fetch(x0 + 1, y0 + 1) * fx * fy
        )
    else:
        raise AugmentationError(f"unknown interpolation {interpolation!r}")
    out = np.clip(np.rint(val), 0, 255).astype(np.uint8)
    return RasterImage(ow, oh, image.channels, out)


def _rgb_to_hsv(rgb: np.ndarray):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(v > 0, c / v, 0.0)
        safe = np.where(c > 0, c, 1.0)
        h = np.where(
            v == r,
            ((g - b) / safe) % 6.0,
            np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
        )
    h = np.where(c > 0, h / 6.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h, s, v):
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def hsv_jitter(image: RasterImage, hue_shift: float, sat_gain: float, val_gain: float) -> RasterImage:
    """Rotate hue by ``hue_shift`` of a full turn and scale S and V, clamped to [0, 1]."""
    if image.channels != 3:
        raise AugmentationError("HSV jitter needs a 3-channel image")
    rgb = image.samples.astype(np.float64) / 255.0
    h, s, v = _rgb_to_hsv(rgb)
    h = (h + hue_shift) % 1.0
    s = np.clip(s * sat_gain, 0.0, 1.0)
    v = np.clip(v * val_gain, 0.0, 1.0)
    out = np.clip(np.rint(_hsv_to_rgb(h, s, v) * 255.0), 0, 255).astype(np.uint8)
    return RasterImage(image.width, image.height, 3, out)


# --------------------------------------------------------------------------
# image + labels


def transform_annotation(
    a: InstanceAnnotation, h: Homography, width: int, height: int, min_area: float
) -> InstanceAnnotation | None:
    """Map, clip and re-assemble one annotation; ``None`` when too little survives."""
    parts = []
    for poly in a.polygons:
        parts.extend(clip_polygon(apply_homography(poly, h), width, height))
    if not parts or sum(polygon_area(p) for p in parts) < min_area:
        return None
    return replace(a, segmentation=make_segmentation(parts))


def augment_sample(
    image: RasterImage,
    annotations: Sequence[InstanceAnnotation],
    spec: TransformSpec,
    min_instance_area: float = 4.0,
    out_size: tuple[int, int] | None = None,
    interpolation: str = "bilinear",
) -> tuple[RasterImage, list[InstanceAnnotation]]:
    if image.channels != 3:
        raise AugmentationError("augment_sample expects a 3-channel image; call gray_to_rgb first")
    ow, oh = out_size if out_size is not None else (image.width, image.height)
    labels = []
    for a in annotations:
        t = transform_annotation(a, spec.h, ow, oh, min_instance_area)
        if t is not None:
            labels.append(t)
    warped = warp_image(image, spec.h, (ow, oh), interpolation)
    if (spec.hue_shift, spec.sat_gain, spec.val_gain) != (0.0, 1.0, 1.0):
        warped = hsv_jitter(warped, spec.hue_shift, spec.sat_gain, spec.val_gain)
    return warped, labels


def resize_homography(width: int, height: int, new_width: int, new_height: int) -> Homography:
    return Homography.scaling(new_width / width, new_height / height)


# --------------------------------------------------------------------------
# files


def read_image(path) -> RasterImage:
    from PIL import Image

    with Image.open(path) as im:
        gray = im.mode in ("1", "L", "I", "I;16", "F")
        arr = np.asarray(im.convert("L" if gray else "RGB"))
    return RasterImage.from_array(arr)


def write_image(image: RasterImage, path) -> None:
    from PIL import Image

    arr = image.samples[:, :, 0] if image.channels == 1 else image.samples
    Image.fromarray(np.ascontiguousarray(arr), mode="L" if image.channels == 1 else "RGB").save(path, format="PNG")


def preview_panel(
    image: RasterImage,
    annotations: Sequence[InstanceAnnotation],
    aug_image: RasterImage,
    aug_annotations: Sequence[InstanceAnnotation],
    path,
) -> None:
    """Write original and augmented images side by side with polygon outlines."""
    from PIL import Image, ImageDraw

    def panel(img, anns):
        arr = img.samples if img.channels == 3 else np.repeat(img.samples, 3, axis=2)
        pil = Image.fromarray(np.ascontiguousarray(arr), mode="RGB")
        draw = ImageDraw.Draw(pil)
        for a in anns:
            for p in a.polygons:
                draw.polygon([tuple(v) for v in p], outline=(120, 255, 120))
        return pil

    left, right = panel(image, annotations), panel(aug_image, aug_annotations)
    canvas = Image.new("RGB", (left.width + right.width + 4, max(left.height, right.height)))
    canvas.paste(left, (0, 0))
    canvas.paste(right, (left.width + 4, 0))
    canvas.save(path, format="PNG")
