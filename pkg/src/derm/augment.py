"""Random affine augmentation and minority-class rebalancing.

A draw samples rotation, zoom and flips, composes them into one affine
map about the image center, and resamples the source by inverse mapping
with bilinear interpolation. Out-of-source samples are filled per the
policy's fill mode (nearest = edge extension, reflect = mirrored with the
edge pixel duplicated, constant = fixed value).

Rebalancing never touches original images: it plans synthetic images by
cycling over each minority class's originals with per-draw derived seeds,
records every sampled parameter in a manifest, and materializes PNGs from
the manifest, so a training set is exactly reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DatasetIndex, load_image, save_png
from .errors import RebalanceError, ShapeError, ValidationError

FILL_MODES = ("nearest", "reflect", "constant")


@dataclass(frozen=True)
class AugmentPolicy:
    rotation_range: float = 180.0  # degrees; draw is uniform in [-r, +r]
    zoom_range: float = 0.1  # scale drawn uniformly in [1-z, 1+z]
    horizontal_flip: bool = True
    vertical_flip: bool = True
    fill_mode: str = "nearest"
    fill_value: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotation_range <= 180.0:
            raise ValidationError(f"rotation_range must be in [0, 180], got {self.rotation_range}")
        if not 0.0 <= self.zoom_range < 1.0:
            raise ValidationError(f"zoom_range must be in [0, 1), got {self.zoom_range}")
        if self.fill_mode not in FILL_MODES:
            raise ValidationError(f"fill_mode must be one of {FILL_MODES}")
        if not 0 <= self.fill_value <= 255:
            raise ValidationError("fill_value must be an 8-bit value")


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw; applying these is fully deterministic."""

    rotation_deg: float = 0.0
    zoom: float = 1.0
    hflip: bool = False
    vflip: bool = False


def sample_params(policy: AugmentPolicy, rng: np.random.Generator) -> AugmentParams:
    r = float(rng.uniform(-policy.rotation_range, policy.rotation_range)) if policy.rotation_range > 0 else 0.0
    z = float(rng.uniform(1.0 - policy.zoom_range, 1.0 + policy.zoom_range)) if policy.zoom_range > 0 else 1.0
    h = bool(policy.horizontal_flip and rng.random() < 0.5)
    v = bool(policy.vertical_flip and rng.random() < 0.5)
    return AugmentParams(rotation_deg=r, zoom=z, hflip=h, vflip=v)


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    idx = np.mod(idx, 2 * n)
    return np.where(idx >= n, 2 * n - 1 - idx, idx)


def apply_affine(image: np.ndarray, params: AugmentParams, fill_mode: str = "nearest",
                 fill_value: int = 0) -> np.ndarray:
    """Rotate/zoom/flip an 8-bit image about its center; extents preserved.

    Positive angles turn the content clockwise (rows render top-down); zoom
    factors above 1 magnify. The inverse map is sampled bilinearly.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.dtype != np.uint8:
        raise ShapeError(f"expected uint8 HxWxC image, got {img.dtype} {img.shape}")
    if fill_mode not in FILL_MODES:
        raise ValidationError(f"fill_mode must be one of {FILL_MODES}")
    if params.rotation_deg == 0.0 and params.zoom == 1.0 and not params.hflip and not params.vflip:
        return img.copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yo, xo = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    vx, vy = xo - cx, yo - cy
    phi = math.radians(-params.rotation_deg)
    rx = math.cos(phi) * vx - math.sin(phi) * vy
    ry = math.sin(phi) * vx + math.cos(phi) * vy
    rx /= params.zoom
    ry /= params.zoom
    if params.hflip:
        rx = -rx
    if params.vflip:
        ry = -ry
    sx, sy = cx + rx, cy + ry

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            xi, yi = x0 + dx, y0 + dy
            if fill_mode == "nearest":
                vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            elif fill_mode == "reflect":
                vals = img[_reflect_index(yi, h), _reflect_index(xi, w)]
            else:
                inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)].astype(np.float64)
                vals[~inside] = float(fill_value)
            weight = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            corners.append(vals.astype(np.float64) * weight[:, :, None])
    out = corners[0] + corners[1] + corners[2] + corners[3]
    return np.rint(out).astype(np.uint8)


def apply_augment(image: np.ndarray, policy: AugmentPolicy,
                  rng: np.random.Generator) -> np.ndarray:
    """Sample one draw from the policy and apply it."""
    return apply_affine(image, sample_params(policy, rng), policy.fill_mode, policy.fill_value)


@dataclass(frozen=True)
class AugmentPlan:
    target_per_class: int = 6000
    classes: tuple[str, ...] | None = None  # None = every class present in training

    def __post_init__(self):
        if self.target_per_class < 1:
            raise ValidationError("target_per_class must be positive")
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(self.classes))


@dataclass(frozen=True)
class ManifestRow:
    synthetic_id: str
    source_image_id: str
    dx: str
    rotation_deg: float
    zoom: float
    hflip: bool
    vflip: bool
    fill_mode: str
    seed: int

    @property
    def params(self) -> AugmentParams:
        return AugmentParams(self.rotation_deg, self.zoom, self.hflip, self.vflip)


def derive_seed(base_seed: int, dx: str, source_image_id: str, draw_index: int) -> int:
    """Stable per-draw seed; independent of generation order."""
    key = f"{base_seed}|{dx}|{source_image_id}|{draw_index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def rebalance_classes(train_index: DatasetIndex, plan: AugmentPlan,
                      policy: AugmentPolicy) -> list[ManifestRow]:
    """Plan synthetic images lifting each class to the target count.

    Classes at or above the target are untouched. Draws cycle over the
    class's originals (sorted by image_id) with one derived seed per draw.
    """
    train = train_index.train_records
    by_class: dict[str, list] = {}
    for r in train:
        by_class.setdefault(r.dx, []).append(r)
    classes = plan.classes if plan.classes is not None else tuple(sorted(by_class))
    manifest: list[ManifestRow] = []
    for dx in classes:
        originals = sorted(by_class.get(dx, []), key=lambda r: r.image_id)
        needed = plan.target_per_class - len(originals)
        if needed <= 0:
            continue
        if not originals:
            raise RebalanceError(f"class {dx!r} has no training images to augment")
        for i in range(needed):
            source = originals[i % len(originals)]
            seed = derive_seed(policy.seed, dx, source.image_id, i)
            params = sample_params(policy, np.random.default_rng(seed))
            manifest.append(
                ManifestRow(
                    synthetic_id=f"{dx}_aug_{i:06d}",
                    source_image_id=source.image_id,
                    dx=dx,
                    rotation_deg=params.rotation_deg,
                    zoom=params.zoom,
                    hflip=params.hflip,
                    vflip=params.vflip,
                    fill_mode=policy.fill_mode,
                    seed=seed,
                )
            )
    return manifest


MANIFEST_COLUMNS = (
    "synthetic_id", "source_image_id", "dx", "rotation_deg", "zoom",
    "hflip", "vflip", "fill_mode", "seed",
)


def write_manifest(manifest: Sequence[ManifestRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for row in manifest:
            writer.writerow(
                [
                    row.synthetic_id, row.source_image_id, row.dx,
                    repr(row.rotation_deg), repr(row.zoom),
                    int(row.hflip), int(row.vflip), row.fill_mode, row.seed,
                ]
            )


def read_manifest(path: str | Path) -> list[ManifestRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(MANIFEST_COLUMNS):
            raise ValidationError(f"not a manifest file: header {reader.fieldnames}")
        return [
            ManifestRow(
                synthetic_id=row["synthetic_id"],
                source_image_id=row["source_image_id"],
                dx=row["dx"],
                rotation_deg=float(row["rotation_deg"]),
                zoom=float(row["zoom"]),
                hflip=row["hflip"] == "1",
                vflip=row["vflip"] == "1",
                fill_mode=row["fill_mode"],
                seed=int(row["seed"]),
            )
            for row in reader
        ]


def materialize_manifest(manifest: Sequence[ManifestRow], source_dir: str | Path,
                         out_dir: str | Path, fill_value: int = 0) -> list[Path]:
    """Render each manifest row's PNG from <source_dir>/<source_image_id>.png."""
    src = Path(source_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for row in manifest:
        img = load_image(src / f"{row.source_image_id}.png")
        aug = apply_affine(img, row.params, row.fill_mode, fill_value)
        dest = out / f"{row.synthetic_id}.png"
        save_png(aug, dest)
        written.append(dest)
    return written
