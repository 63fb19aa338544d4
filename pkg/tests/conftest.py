import os
from pathlib import Path

import numpy as np
import pytest

from derm.dataset import MetadataRecord
from derm.labels import CLASS_CODES

# Full HAM10000 metadata is optional: point DERM_HAM10000_CSV at the file
# (or drop it at data/HAM10000_metadata.csv) to enable the full-data checks.
HAM_ENV = "DERM_HAM10000_CSV"


def ham10000_csv_path():
    candidates = []
    if os.environ.get(HAM_ENV):
        candidates.append(Path(os.environ[HAM_ENV]))
    candidates.append(Path(__file__).resolve().parent.parent / "data" / "HAM10000_metadata.csv")
    for p in candidates:
        if p.is_file():
            return p
    return None


@pytest.fixture
def ham10000_csv():
    p = ham10000_csv_path()
    if p is None:
        pytest.skip(f"HAM10000 metadata not present (set {HAM_ENV})")
    return p


def make_records(per_class=4, missing_age_every=5, multi_image_every=3):
    """Synthetic HAM10000-shaped records, deterministic.

    Every `multi_image_every`-th record shares its lesion with the next one,
    making those lesions ineligible for validation.
    """
    records = []
    serial = 0
    sites = ("back", "abdomen", "face", "lower extremity", "trunk")
    for ci, dx in enumerate(CLASS_CODES):
        for j in range(per_class):
            lesion = f"HAM_{serial:07d}"
            image = f"ISIC_{serial:07d}"
            age = None if serial % missing_age_every == 4 else float(20 + (serial * 7) % 60)
            records.append(
                MetadataRecord(
                    lesion_id=lesion,
                    image_id=image,
                    dx=dx,
                    dx_type="histo",
                    age=age,
                    sex="male" if serial % 2 else "female",
                    localization=sites[serial % len(sites)],
                )
            )
            serial += 1
            if j % multi_image_every == 2:
                records.append(
                    MetadataRecord(
                        lesion_id=lesion,
                        image_id=f"ISIC_{serial:07d}",
                        dx=dx,
                        dx_type="histo",
                        age=age,
                        sex="male",
                        localization=sites[serial % len(sites)],
                    )
                )
                serial += 1
    return records


def records_to_csv(records, path: Path):
    lines = ["lesion_id,image_id,dx,dx_type,age,sex,localization"]
    for r in records:
        age = "" if r.age is None else (repr(r.age) if r.age % 1 else str(int(r.age)))
        lines.append(
            f"{r.lesion_id},{r.image_id},{r.dx},{r.dx_type},{age},{r.sex},{r.localization}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def synth_records():
    return make_records()


@pytest.fixture
def synth_csv(tmp_path, synth_records):
    return records_to_csv(synth_records, tmp_path / "metadata.csv")


@pytest.fixture
def rng():
    return np.random.default_rng(424242)


CLASS_COLORS = (
    (220, 40, 40),
    (40, 220, 40),
    (40, 40, 220),
    (220, 220, 40),
    (220, 40, 220),
    (40, 220, 220),
    (230, 230, 230),
)


def color_dataset(per_class=10, size=32):
    """Seven classes of constant-color images, trivially separable."""
    from derm.train import ArrayDataset

    images, labels = [], []
    for ci, rgb in enumerate(CLASS_COLORS):
        img = np.full((size, size, 3), rgb, dtype=np.float32) / 127.5 - 1.0
        for _ in range(per_class):
            images.append(img)
            labels.append(ci)
    return ArrayDataset(images=np.stack(images), labels=np.array(labels))
