"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion. The two full-dataset checks run only when the HAM10000 metadata
CSV is available (see conftest.ham10000_csv_path); without it they fall
back to, respectively, a synthetic property suite and a skip.
"""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from derm.augment import (
    AugmentParams,
    AugmentPlan,
    AugmentPolicy,
    apply_affine,
    apply_augment,
    rebalance_classes,
)
from derm.dataset import eda_histograms, impute_age, load_metadata, make_split
from derm.errors import (
    MissingWeightError,
    TruncatedPayloadError,
    WeightFormatError,
)
from derm.labels import CLASS_CODES
from derm.metrics import (
    ConfusionMatrix,
    categorical_accuracy,
    class_report,
    confusion_matrix,
    micro_average,
    per_class_prf,
    round2,
)
from derm.model import (
    ModelConfig,
    build_mobilenet,
    load_weights,
    save_weights,
    set_trainable_boundary,
)
from derm.nn_ops import ConvParams, conv2d, depthwise_conv2d, head_gradients
from derm.service import bundle_from_model, create_app
from derm.tensor import Tensor
from derm.train import TrainConfig, train_head

from .conftest import color_dataset, make_records
from .oracles import conv2d_loops, depthwise_loops, fd_head_gradients, rotate90_cw
from .test_service import gradient_png


def ok(name):
    print(f"\n[ACCEPTANCE] {name}: PASS")


def test_convolution_oracle():
    """conv2d/depthwise match naive loops on >=100 random cases, rel 1e-4, <60s."""
    start = time.perf_counter()
    rng = np.random.default_rng(20250809)
    cases = 0
    while cases < 200:  # alternating kinds: 100 conv2d + 100 depthwise
        n = int(rng.integers(1, 3))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        kh = int(rng.integers(1, 4))
        kw = int(rng.integers(1, 4))
        stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        padding = "same" if rng.random() < 0.5 else "valid"
        if padding == "valid" and (h < kh or w < kw):
            padding = "same"
        if cases % 2 == 0:
            cin = int(rng.integers(1, 5))
            cout = int(rng.integers(1, 5))
            x = Tensor(rng.standard_normal((n, h, w, cin)).astype(np.float32))
            weights = Tensor(rng.standard_normal((kh, kw, cin, cout)).astype(np.float32))
            bias = rng.standard_normal(cout).astype(np.float32) if rng.random() < 0.5 else None
            got = conv2d(x, weights, bias, ConvParams(stride, padding)).array
            want = conv2d_loops(x.array, weights.array, bias, stride, padding)
        else:
            c = int(rng.integers(1, 6))
            x = Tensor(rng.standard_normal((n, h, w, c)).astype(np.float32))
            weights = Tensor(rng.standard_normal((kh, kw, c)).astype(np.float32))
            got = depthwise_conv2d(x, weights, ConvParams(stride, padding)).array
            want = depthwise_loops(x.array, weights.array, stride, padding)
        np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-5)
        cases += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"oracle suite took {elapsed:.1f}s"
    ok(f"convolution oracle ({cases} cases in {elapsed:.1f}s)")


def test_gradient_check():
    """head_gradients vs 64-bit central differences, 25 instances, rel err < 1e-3."""
    for trial in range(25):
        rng = np.random.default_rng(7000 + trial)
        n = int(rng.integers(1, 5))
        c = int(rng.integers(1, 9))
        k = 7
        x = rng.standard_normal((n, c)).astype(np.float32)
        w = (rng.standard_normal((c, k)) * 0.5).astype(np.float32)
        b = (rng.standard_normal(k) * 0.1).astype(np.float32)
        y = np.zeros((n, k), dtype=np.float32)
        y[np.arange(n), rng.integers(0, k, n)] = 1.0
        mask = np.ones((n, c), dtype=np.float32)
        dw, db, _ = head_gradients(Tensor(x), Tensor(mask), Tensor(w), Tensor(b), y)
        fdw, fdb = fd_head_gradients(x, w, b, y)
        rel_w = np.abs(dw.array - fdw).max() / max(np.abs(fdw).max(), 1e-12)
        rel_b = np.abs(db.array - fdb).max() / max(np.abs(fdb).max(), 1e-12)
        assert rel_w < 1e-3 and rel_b < 1e-3, f"trial {trial}: rel_w={rel_w}, rel_b={rel_b}"
    ok("gradient check (25 randomized instances)")


def test_metric_identities():
    """Micro p == r == f1 == accuracy and weighted recall == accuracy, exact, x1000."""
    rng = np.random.default_rng(31337)
    checked = 0
    while checked < 1000:
        counts = rng.integers(0, 50, (7, 7))
        if counts.sum() == 0:
            continue
        m = ConfusionMatrix(counts)
        acc = categorical_accuracy(m)
        p, r, f = micro_average(m)
        assert p == acc and r == acc and f == acc
        report = class_report(m)
        assert report.weighted[1] == acc
        checked += 1
    ok("metric identities (1000 random matrices, exact)")


def test_benchmark_metric_arithmetic():
    """Recalls from the benchmark confusion rows round to 0.93/0.87/0.69; f1 -> 0.40."""
    supports = {"nv": 751, "bcc": 30, "mel": 39}
    diagonal = {"nv": 696, "bcc": 26, "mel": 27}
    m = np.zeros((7, 7), dtype=np.int64)
    for code in supports:
        c = CLASS_CODES.index(code)
        m[c, c] = diagonal[code]
        m[c, (c + 1) % 7] += supports[code] - diagonal[code]
    for code in set(CLASS_CODES) - set(supports):
        c = CLASS_CODES.index(code)
        m[c, c] = 1
    prf = per_class_prf(ConfusionMatrix(m))
    assert round2(prf.recall[CLASS_CODES.index("nv")]) == "0.93"
    assert round2(prf.recall[CLASS_CODES.index("bcc")]) == "0.87"
    assert round2(prf.recall[CLASS_CODES.index("mel")]) == "0.69"
    f1 = 2 * 0.28 * 0.69 / (0.28 + 0.69)
    assert round2(f1) == "0.40"
    ok("benchmark metric arithmetic (0.93 / 0.87 / 0.69 recalls, 0.40 f1)")


def test_overfit_smoke():
    """7x10 color classes reach 100% train accuracy within 50 epochs, twice, <5min."""
    start = time.perf_counter()
    config = ModelConfig(input_size=64, width_multiplier=0.25)
    data = color_dataset(per_class=10, size=64)
    train_config = TrainConfig(batch_size=10, epochs=50, seed=1)

    def one_run():
        model = set_trainable_boundary(
            build_mobilenet(config, np.random.default_rng(7)), "head_only"
        )
        return train_head(model, data, data, train_config)[1]

    logs_a = one_run()
    logs_b = one_run()
    assert logs_a == logs_b, "seeded runs diverged"
    first_full = next((l.epoch for l in logs_a if l.train_acc == 1.0), None)
    assert first_full is not None, "never reached 100% train accuracy"
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0, f"smoke test took {elapsed:.0f}s"
    ok(f"overfit smoke (100% at epoch {first_full}, two identical runs, {elapsed:.0f}s)")


def test_augmentation_contracts():
    """Identity policy bit-exact; double flip identity; 90deg permutation; rebalance counts."""
    rng = np.random.default_rng(11)
    img = rng.integers(0, 256, (9, 9, 3), dtype=np.uint8)
    identity = AugmentPolicy(rotation_range=0, zoom_range=0, horizontal_flip=False,
                             vertical_flip=False)
    assert np.array_equal(apply_augment(img, identity, np.random.default_rng(0)), img)

    flip = AugmentParams(hflip=True)
    assert np.array_equal(apply_affine(apply_affine(img, flip), flip), img)

    assert np.array_equal(apply_affine(img, AugmentParams(rotation_deg=90.0)), rotate90_cw(img))

    records = make_records(per_class=4)
    index = make_split(records, validation_target=4, seed=0)
    manifest = rebalance_classes(index, AugmentPlan(target_per_class=9), AugmentPolicy(seed=5))
    train_ids = {r.image_id for r in index.train_records}
    counts: dict[str, int] = {}
    for r in index.train_records:
        counts[r.dx] = counts.get(r.dx, 0) + 1
    synth: dict[str, int] = {}
    for row in manifest:
        assert row.source_image_id in train_ids, "manifest source outside training set"
        synth[row.dx] = synth.get(row.dx, 0) + 1
    for dx, n in counts.items():
        assert n + synth.get(dx, 0) == max(n, 9)
    ok("augmentation (identity, involution, quarter-turn oracle, rebalance counts)")


def test_split_criterion(request):
    """Full-data split counts when HAM10000 is present, else synthetic properties."""
    from .conftest import ham10000_csv_path

    csv_path = ham10000_csv_path()
    if csv_path is not None:
        records = load_metadata(csv_path)
        counts = {c: 0 for c in CLASS_CODES}
        for r in records:
            counts[r.dx] += 1
        assert counts == {"nv": 6705, "mel": 1113, "bkl": 1099, "bcc": 514,
                          "akiec": 327, "vasc": 142, "df": 115}
        imputed = impute_age(records)
        assert sum(1 for r in imputed if r.age_imputed) == 57
        index = make_split(imputed, validation_target=938, seed=1)
        assert len(index.train_records) == 9077
        assert len(index.validation_records) == 938
        train_lesions = {r.lesion_id for r in index.train_records}
        val_lesions = {r.lesion_id for r in index.validation_records}
        assert train_lesions.isdisjoint(val_lesions)
        ok("split (full HAM10000: counts, 57 imputations, 9077/938, no overlap)")
        return
    for seed in range(5):
        records = make_records(per_class=4)
        index = make_split(records, validation_target=7, seed=seed)
        assert len(index.train_records) + len(index.validation_records) == len(records)
        assert len(index.validation_records) == 7
        assert {r.lesion_id for r in index.train_records}.isdisjoint(
            {r.lesion_id for r in index.validation_records}
        )
        again = make_split(records, validation_target=7, seed=seed)
        assert again.split == index.split
    ok("split (synthetic property suite; HAM10000 metadata not present)")


def test_eda_criterion():
    """Age-histogram mode bin contains 45 and back ranks top-5 (full data only)."""
    from .conftest import ham10000_csv_path

    csv_path = ham10000_csv_path()
    if csv_path is None:
        pytest.skip("HAM10000 metadata not present; EDA criterion needs the full file")
    records = impute_age(load_metadata(csv_path))
    report = eda_histograms(records)
    mode_bin = max(report.age_overall.items(), key=lambda kv: kv[1])[0]
    assert mode_bin <= 45 < mode_bin + 5
    top5 = [site for site, _ in report.localization_counts[:5]]
    assert "back" in top5
    ok("eda (mode bin contains 45; back in top localizations)")


def test_weight_format(tmp_path):
    """Round trip bit-identical; magic/truncation/missing raise distinct errors."""
    config = ModelConfig(input_size=32, width_multiplier=0.25)
    model = build_mobilenet(config, np.random.default_rng(2))
    path = tmp_path / "m.dwsn"
    save_weights(model, path)
    loaded = load_weights(path, config)
    for name, t in model.weights.items():
        assert np.array_equal(loaded.weights[name].array, t.array), name

    blob = path.read_bytes()
    bad_magic = tmp_path / "magic.dwsn"
    bad_magic.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(WeightFormatError):
        load_weights(bad_magic, config)

    truncated = tmp_path / "trunc.dwsn"
    truncated.write_bytes(blob[:-32])
    with pytest.raises(TruncatedPayloadError):
        load_weights(truncated, config)

    import json
    import struct

    (header_len,) = struct.unpack_from("<Q", blob, 8)
    records = json.loads(blob[16 : 16 + header_len])
    records = [r for r in records if r["name"] != "stem/conv/kernel"]
    header = json.dumps(records, separators=(",", ":")).encode()
    missing = tmp_path / "missing.dwsn"
    missing.write_bytes(blob[:8] + struct.pack("<Q", len(header)) + header + blob[16 + header_len:])
    with pytest.raises(MissingWeightError, match="stem/conv/kernel"):
        load_weights(missing, config)
    ok("weight format (bit-exact round trip; three distinct load errors)")


def test_service_criterion():
    """Predict endpoint: 7 descending probabilities summing to 1; 400 on garbage;
    byte-identical repeats. Runs with no web UI built."""
    model = build_mobilenet(ModelConfig(input_size=32, width_multiplier=0.25),
                            np.random.default_rng(4))
    client = TestClient(create_app(bundle_from_model(model)))
    payload = gradient_png()
    r = client.post("/v1/predict", content=payload, headers={"Content-Type": "image/png"})
    assert r.status_code == 200
    doc = r.json()
    probs = [p["probability"] for p in doc["predictions"]]
    assert len(probs) == 7
    assert abs(sum(probs) - 1.0) <= 1e-6
    assert probs == sorted(probs, reverse=True)

    bad = client.post("/v1/predict", content=b"not an image",
                      headers={"Content-Type": "image/png"})
    assert bad.status_code == 400
    assert bad.json()["error"] == "undecodable image"

    again = client.post("/v1/predict", content=payload, headers={"Content-Type": "image/png"})
    assert again.content == r.content
    ok("service (7 descending probabilities, 400 on garbage, byte-identical repeats)")
