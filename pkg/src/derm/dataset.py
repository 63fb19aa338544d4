"""Metadata ingestion, age imputation, leakage-free splitting, pixel
preprocessing, and exploratory histogram reports for HAM10000-style data.

The metadata CSV layout is the public HAM10000 one:
lesion_id,image_id,dx,dx_type,age,sex,localization — with possibly empty
age cells. Multiple images may share a lesion_id; the validation split is
drawn only from single-image lesions so no near-duplicate of a validation
image can appear in training.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ImputationError,
    MetadataParseError,
    ShapeError,
    SplitError,
    ValidationError,
)
from .labels import CLASS_CODES
from .tensor import Tensor

METADATA_COLUMNS = ("lesion_id", "image_id", "dx", "dx_type", "age", "sex", "localization")
AGE_BIN_YEARS = 5


@dataclass(frozen=True)
class MetadataRecord:
    lesion_id: str
    image_id: str
    dx: str
    dx_type: str
    age: float | None
    sex: str
    localization: str
    age_imputed: bool = False


@dataclass(frozen=True)
class DatasetIndex:
    """Split-aware record collection; iteration is sorted by image_id."""

    records: tuple[MetadataRecord, ...]
    split: dict[str, str]  # image_id -> "train" | "validation"
    image_root: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        missing = [r.image_id for r in self.records if r.image_id not in self.split]
        if missing:
            raise ValidationError(f"records without a split assignment: {missing[:3]}")

    def subset(self, side: str) -> tuple[MetadataRecord, ...]:
        return tuple(
            sorted(
                (r for r in self.records if self.split[r.image_id] == side),
                key=lambda r: r.image_id,
            )
        )

    @property
    def train_records(self) -> tuple[MetadataRecord, ...]:
        return self.subset("train")

    @property
    def validation_records(self) -> tuple[MetadataRecord, ...]:
        return self.subset("validation")


def load_metadata(csv_path: str | Path) -> list[MetadataRecord]:
    """Parse the metadata CSV; empty age cells become None."""
    path = Path(csv_path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in METADATA_COLUMNS if c not in header]
        if missing:
            raise MetadataParseError(f"metadata header lacks columns {missing}")
        records = []
        for rownum, row in enumerate(reader, start=2):
            try:
                records.append(_parse_row(row))
            except (MetadataParseError, KeyError, TypeError) as exc:
                raise MetadataParseError(f"row {rownum}: {exc}") from None
    return records


def _parse_row(row: dict) -> MetadataRecord:
    dx = (row["dx"] or "").strip()
    if dx not in CLASS_CODES:
        raise MetadataParseError(f"unknown dx {dx!r}")
    raw_age = (row["age"] or "").strip()
    age = None
    if raw_age:
        try:
            age = float(raw_age)
        except ValueError:
            raise MetadataParseError(f"malformed age {raw_age!r}")
        if not 0.0 <= age <= 120.0:
            raise MetadataParseError(f"age {age} outside [0, 120]")
    return MetadataRecord(
        lesion_id=(row["lesion_id"] or "").strip(),
        image_id=(row["image_id"] or "").strip(),
        dx=dx,
        dx_type=(row["dx_type"] or "").strip(),
        age=age,
        sex=(row["sex"] or "").strip(),
        localization=(row["localization"] or "").strip(),
    )


def impute_age(records: Sequence[MetadataRecord]) -> list[MetadataRecord]:
    """Fill missing ages with the mean of the observed ages (computed pre-fill)."""
    observed = [r.age for r in records if r.age is not None]
    if not observed:
        raise ImputationError("cannot impute: no observed ages")
    mean_age = sum(observed) / len(observed)
    return [
        replace(r, age=mean_age, age_imputed=True) if r.age is None else r
        for r in records
    ]


def make_split(records: Sequence[MetadataRecord], validation_target: int,
               seed: int) -> DatasetIndex:
    """Draw the validation set uniformly from single-image lesions.

    Lesions with multiple images stay entirely in training, so nothing in
    validation has a same-lesion duplicate on the training side.
    """
    if not 0 <= validation_target < len(records):
        raise SplitError(
            f"validation target {validation_target} must be < record count {len(records)}"
        )
    counts: dict[str, int] = {}
    for r in records:
        counts[r.lesion_id] = counts.get(r.lesion_id, 0) + 1
    eligible = sorted(
        (r for r in records if counts[r.lesion_id] == 1), key=lambda r: r.image_id
    )
    if len(eligible) < validation_target:
        raise SplitError(
            f"only {len(eligible)} single-image lesions available for a "
            f"validation set of {validation_target}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(eligible), size=validation_target, replace=False)
    val_ids = {eligible[i].image_id for i in chosen}
    split = {
        r.image_id: "validation" if r.image_id in val_ids else "train" for r in records
    }
    return DatasetIndex(records=tuple(records), split=split)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an 8-bit image with half-pixel source centers.

    src = (dst + 0.5) * scale - 0.5, clamped to the source bounds; channels
    are resampled independently. Aspect distortion is accepted (no crop).
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.dtype != np.uint8:
        raise ShapeError(f"expected uint8 HxWxC image, got {img.dtype} {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValidationError("output extents must be positive")
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    img64 = img.astype(np.float64)
    top = img64[y0[:, None], x0[None, :]] * (1 - fx) + img64[y0[:, None], x1[None, :]] * fx
    bot = img64[y1[:, None], x0[None, :]] * (1 - fx) + img64[y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def preprocess_pixels(image: np.ndarray) -> Tensor:
    """Map an 8-bit RGB image to a (1,H,W,3) float tensor in [-1, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got {img.shape}")
    x = img.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    return Tensor(x[None, ...])


def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes to an 8-bit RGB array; ValidationError if undecodable."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValidationError(f"undecodable image: {exc}") from None


def load_image(path: str | Path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def save_png(image: np.ndarray, path: str | Path) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.dtype != np.uint8:
        raise ShapeError(f"expected uint8 HxWxC image, got {img.dtype} {img.shape}")
    Image.fromarray(img, mode="RGB").save(Path(path), format="PNG")


@dataclass(frozen=True)
class EdaReport:
    """Plot-ready histogram data; age bins are AGE_BIN_YEARS wide."""

    age_by_class: dict[str, dict[int, int]]  # dx -> bin start -> count
    age_overall: dict[int, int]
    localization_counts: tuple[tuple[str, int], ...]  # sorted descending
    class_counts: dict[str, int]
    include_imputed: bool


def _age_bin(age: float) -> int:
    return int(age // AGE_BIN_YEARS) * AGE_BIN_YEARS


def eda_histograms(records: Sequence[MetadataRecord], include_imputed: bool = True) -> EdaReport:
    """Per-class and overall age histograms, localization and class counts."""
    if not records:
        raise ValidationError("cannot run EDA on an empty record list")
    age_by_class: dict[str, dict[int, int]] = {c: {} for c in CLASS_CODES}
    age_overall: dict[int, int] = {}
    loc: dict[str, int] = {}
    class_counts = {c: 0 for c in CLASS_CODES}
    for r in records:
        class_counts[r.dx] += 1
        loc[r.localization] = loc.get(r.localization, 0) + 1
        if r.age is None or (r.age_imputed and not include_imputed):
            continue
        b = _age_bin(r.age)
        age_by_class[r.dx][b] = age_by_class[r.dx].get(b, 0) + 1
        age_overall[b] = age_overall.get(b, 0) + 1
    ordered_loc = tuple(sorted(loc.items(), key=lambda kv: (-kv[1], kv[0])))
    return EdaReport(
        age_by_class={c: dict(sorted(v.items())) for c, v in age_by_class.items()},
        age_overall=dict(sorted(age_overall.items())),
        localization_counts=ordered_loc,
        class_counts=class_counts,
        include_imputed=include_imputed,
    )


def _bin_label(start: int) -> str:
    return f"{start}-{start + AGE_BIN_YEARS - 1}"


def write_eda_files(report: EdaReport, out_dir: str | Path) -> list[Path]:
    """Emit one CSV per histogram plus a combined JSON document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = "bin_or_category,class_or_total,count\n"

    def write_csv(name: str, rows: Iterable[tuple[str, str, int]]) -> Path:
        p = out / name
        with p.open("w", encoding="utf-8", newline="") as fh:
            fh.write(header)
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        return p

    paths = [
        write_csv(
            "eda_age_by_class.csv",
            (
                (_bin_label(b), dx, n)
                for dx in CLASS_CODES
                for b, n in report.age_by_class[dx].items()
            ),
        ),
        write_csv(
            "eda_age_overall.csv",
            ((_bin_label(b), "total", n) for b, n in report.age_overall.items()),
        ),
        write_csv(
            "eda_localization.csv",
            ((site, "total", n) for site, n in report.localization_counts),
        ),
        write_csv(
            "eda_class_counts.csv",
            ((dx, "total", report.class_counts[dx]) for dx in CLASS_CODES),
        ),
    ]
    doc = {
        "age_bin_years": AGE_BIN_YEARS,
        "include_imputed": report.include_imputed,
        "age_by_class": {
            dx: {_bin_label(b): n for b, n in bins.items()}
            for dx, bins in report.age_by_class.items()
        },
        "age_overall": {_bin_label(b): n for b, n in report.age_overall.items()},
        "localization_counts": [[site, n] for site, n in report.localization_counts],
        "class_counts": report.class_counts,
    }
    json_path = out / "eda_report.json"
    json_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    paths.append(json_path)
    return paths


SPLIT_COLUMNS = METADATA_COLUMNS + ("age_imputed", "split")


def write_split_csv(index: DatasetIndex, path: str | Path) -> None:
    """Persist records plus their split assignment for downstream commands."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPLIT_COLUMNS)
        for r in sorted(index.records, key=lambda r: r.image_id):
            writer.writerow(
                [
                    r.lesion_id,
                    r.image_id,
                    r.dx,
                    r.dx_type,
                    "" if r.age is None else repr(r.age),
                    r.sex,
                    r.localization,
                    int(r.age_imputed),
                    index.split[r.image_id],
                ]
            )


def read_split_csv(path: str | Path, image_root: str | Path | None = None) -> DatasetIndex:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(SPLIT_COLUMNS):
            raise MetadataParseError(f"not a split file: header {reader.fieldnames}")
        records, split = [], {}
        for rownum, row in enumerate(reader, start=2):
            rec = _parse_row(row)
            rec = replace(rec, age_imputed=row["age_imputed"] == "1")
            if row["split"] not in ("train", "validation"):
                raise MetadataParseError(f"row {rownum}: bad split {row['split']!r}")
            records.append(rec)
            split[rec.image_id] = row["split"]
    return DatasetIndex(
        records=tuple(records),
        split=split,
        image_root=Path(image_root) if image_root else None,
    )
