#!/usr/bin/env python3
"""Generate a small synthetic HAM10000-shaped dataset for pipeline demos.

Writes metadata.csv plus one PNG per image id under <out>/raw/. Classes are
color-coded noisy blobs so the head can actually learn something; a few
lesions own two images (ineligible for validation) and some age cells are
left empty to exercise imputation.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from derm.dataset import save_png
from derm.labels import CLASS_CODES

CLASS_COLORS = {
    "akiec": (220, 40, 40),
    "bcc": (40, 220, 40),
    "bkl": (40, 40, 220),
    "df": (220, 220, 40),
    "mel": (220, 40, 220),
    "nv": (40, 220, 220),
    "vasc": (230, 230, 230),
}
SITES = ("back", "lower extremity", "trunk", "upper extremity", "abdomen", "face")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_data")
    parser.add_argument("--per-class", type=int, default=6)
    parser.add_argument("--image-size", type=int, default=96)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    raw = out / "raw"
    raw.mkdir(parents=True, exist_ok=True)

    rows = []
    serial = 0
    for dx in CLASS_CODES:
        color = np.array(CLASS_COLORS[dx], dtype=np.int32)
        for j in range(args.per_class):
            lesion = f"SYN_{serial:07d}"
            n_images = 2 if j % 4 == 3 else 1  # some lesions own two images
            age = "" if serial % 9 == 5 else str(float(rng.integers(20, 85)))
            for _ in range(n_images):
                image_id = f"SYNIMG_{serial:07d}"
                noise = rng.integers(-35, 35, (args.image_size, args.image_size, 3))
                img = np.clip(color + noise, 0, 255).astype(np.uint8)
                yy, xx = np.mgrid[0 : args.image_size, 0 : args.image_size]
                r = args.image_size // 3
                blob = ((yy - args.image_size // 2) ** 2 + (xx - args.image_size // 2) ** 2) < r * r
                img[~blob] = (img[~blob] * 0.4).astype(np.uint8)
                save_png(img, raw / f"{image_id}.png")
                rows.append(
                    [lesion, image_id, dx, "histo", age,
                     "male" if serial % 2 else "female", SITES[serial % len(SITES)]]
                )
                serial += 1

    with (out / "metadata.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lesion_id", "image_id", "dx", "dx_type", "age", "sex", "localization"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} records and images to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
