import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import textured
from hazegan import data, metrics
from hazegan.errors import InvalidParameterError, ShapeError


@pytest.fixture
def pair(rng):
    hazy = textured(rng, 16, 16, 0.3, 0.8)
    out = np.clip(0.5 + 1.6 * (hazy - 0.55) + 0.03 * rng.standard_normal(hazy.shape), 0, 1)
    out[0, :4] = 1.0
    out[5, 5] = 0.0
    return hazy, out


def test_psnr_closed_forms(rng):
    x = rng.uniform(0.2, 0.8, size=(8, 8, 3))
    assert metrics.psnr(x, x) == 100.0
    assert metrics.psnr(x, x + 1 / 255) == pytest.approx(20 * np.log10(255), abs=1e-9)
    assert metrics.psnr(x, x - 0.1) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ShapeError):
        metrics.psnr(x, x[:4])


def test_ssim_identity_and_small_input(rng):
    x = rng.uniform(size=(16, 16, 3))
    assert metrics.ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidParameterError):
        metrics.ssim(x[:10], x[:10])


def test_ssim_against_independent_implementation(rng):
    skm = pytest.importorskip("skimage.metrics")
    a = textured(rng, 32, 32)
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
    ya, yb = metrics.luminance(a), metrics.luminance(b)
    _, full = skm.structural_similarity(
        ya, yb, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0, full=True
    )
    # skimage's map is 'same' size; the fully-inside windows are the interior
    want = full[5:-5, 5:-5].mean()
    assert metrics.ssim(a, b) == pytest.approx(want, abs=1e-9)


def test_ssim_negative_and_noise_fixtures(rng):
    a = textured(rng, 24, 24, 0.25, 0.75)
    assert metrics.ssim(a, 1 - a) < 0.5
    c = np.full((24, 24, 3), 0.5)
    assert metrics.ssim(c, c + 1e-4 * rng.standard_normal(c.shape)) > 0.99


def test_metrics_match_loop_oracles(pair):
    hazy, out = pair
    h, o = hazy.tolist(), out.tolist()
    assert metrics.psnr(hazy, out) == pytest.approx(oracles.psnr(h, o), abs=1e-6)
    assert metrics.ssim(hazy, out) == pytest.approx(oracles.ssim(h, o), abs=1e-6)
    assert metrics.gradient_ratio_r(hazy, out) == pytest.approx(oracles.gradient_ratio(h, o), abs=1e-6)
    assert metrics.saturation_sigma(hazy, out) == pytest.approx(oracles.saturation(h, o), abs=1e-6)
    assert metrics.contrast_gain_c(hazy, out) == pytest.approx(oracles.contrast_gain(h, o), abs=1e-6)


def test_identity_values_exact(pair):
    x, _ = pair
    assert metrics.psnr(x, x) == 100.0
    assert metrics.ssim(x, x) == 1.0
    assert metrics.gradient_ratio_r(x, x) == 1.0
    assert metrics.saturation_sigma(x, x) == 0.0
    assert metrics.contrast_gain_c(x, x) == 0.0


def test_visible_edges():
    assert not metrics.visible_edges(np.full((8, 8, 3), 0.4)).mask.any()
    step = np.zeros((8, 8, 3))
    step[:, 4:] = 1.0
    mask = metrics.visible_edges(step).mask
    assert mask[:, 3:5].all() and not mask[:, :3].any() and not mask[:, 5:].any()
    ramp = np.repeat(np.tile(0.01 * np.arange(10.0), (6, 1))[..., None], 3, axis=2)
    edges = metrics.visible_edges(ramp)
    np.testing.assert_allclose(edges.magnitude[:, 1:-1], 0.04, atol=1e-12)
    assert edges.mask[:, 1:-1].all()


def test_gradient_ratio_cases(rng):
    hazy = textured(rng, 16, 16, 0.35, 0.65)
    assert metrics.gradient_ratio_r(hazy, hazy) == pytest.approx(1.0, abs=1e-12)
    stretched = 0.5 + 2.0 * (hazy - 0.5)
    assert stretched.min() > 0 and stretched.max() < 1
    assert metrics.gradient_ratio_r(hazy, stretched) == pytest.approx(2.0, abs=1e-9)
    flat = np.full((8, 8, 3), 0.5)
    res = metrics.gradient_ratio_details(hazy[:8, :8], flat)
    assert res.r == 1.0 and res.empty_mask


def test_saturation_cases():
    grey = np.full((10, 10, 3), 0.5)
    assert metrics.saturation_sigma(grey, grey) == 0.0
    assert metrics.saturation_sigma(grey, np.ones_like(grey)) == 100.0
    out = grey.copy()
    out.reshape(-1, 3)[::10, 1] = 0.0
    assert metrics.saturation_sigma(grey, out) == 10.0
    assert oracles.saturation(grey.tolist(), out.tolist()) == 10.0


def test_contrast_blur_is_negative(rng):
    tex = textured(rng, 20, 20)
    pad = np.pad(tex, ((2, 2), (2, 2), (0, 0)), mode="edge")
    blurred = sum(pad[i : i + 20, j : j + 20] for i in range(5) for j in range(5)) / 25
    assert metrics.contrast_gain_c(tex, blurred) < 0
    assert metrics.contrast_gain_c(tex, tex) == 0.0


@settings(max_examples=30, deadline=None)
@given(
    a=arrays(np.float64, (12, 12, 3), elements=st.floats(0, 1)),
    b=arrays(np.float64, (12, 12, 3), elements=st.floats(0, 1)),
)
def test_metric_ranges(a, b):
    assert metrics.psnr(a, b) == metrics.psnr(b, a)
    s = metrics.ssim(a, b)
    assert -1 - 1e-9 <= s <= 1 + 1e-9
    sig = metrics.saturation_sigma(a, b)
    assert 0 <= sig <= 100
    r = metrics.gradient_ratio_r(a, b)
    assert r > 0 and np.isfinite(r)
    assert np.isfinite(metrics.contrast_gain_c(a, b))


def test_mean_std():
    assert metrics.mean_std([3.5]) == (3.5, 0.0)
    m, s = metrics.mean_std([1.0, 2.0, 4.0])
    assert m == pytest.approx(7 / 3, abs=1e-15)
    assert s == pytest.approx(oracles.mean_std([1.0, 2.0, 4.0])[1], abs=1e-15)


@pytest.fixture
def three_set(tmp_path, rng):
    root = tmp_path / "set"
    outs = tmp_path / "outs"
    for i in range(3):
        clear = textured(rng, 16, 16)
        hazy = 0.6 * clear + 0.4
        data.write_image(root / "clear" / f"im{i}.png", clear)
        data.write_image(root / "hazy" / f"im{i}.png", hazy)
        data.write_image(outs / f"im{i}.png", np.clip(clear + 0.02 * (i + 1), 0, 1))
    return data.load_manifest(root), outs


def test_evaluate_set_hand_computed(three_set):
    manifest, outs = three_set
    report = metrics.evaluate_set(manifest, outs, "m")
    assert len(report.records) == 3 and not report.errors
    per = []
    for pair in manifest.pairs:
        c = data.read_image(pair.clear_path).tolist()
        o = data.read_image(outs / f"{pair.id}.png").tolist()
        per.append(oracles.psnr(c, o))
    m, s = oracles.mean_std(per)
    agg = report.aggregates["psnr"]
    assert agg["mean"] == pytest.approx(m, abs=1e-9)
    assert agg["std"] == pytest.approx(s, abs=1e-9)
    assert agg["count"] == 3


def test_evaluate_identical_outputs(tmp_path, three_set):
    manifest, _ = three_set
    report = metrics.evaluate_set(manifest, manifest.pairs[0].clear_path.parent, "ref")
    agg = report.aggregates
    assert agg["psnr"]["mean"] == 100.0 and agg["psnr"]["std"] == 0.0
    assert agg["ssim"]["mean"] == 1.0 and agg["ssim"]["std"] == 0.0


def test_evaluate_missing_and_single(tmp_path, three_set):
    manifest, outs = three_set
    (outs / "im1.png").unlink()
    (outs / "im2.png").unlink()
    report = metrics.evaluate_set(manifest, outs)
    assert [r["id"] for r in report.records] == ["im0"]
    assert len(report.errors) == 2
    assert report.aggregates["psnr"]["std"] == 0.0


def test_no_reference_set_skips_full_reference(tmp_path, rng):
    root = tmp_path / "noref"
    data.write_image(root / "hazy" / "a.png", textured(rng))
    data.write_image(tmp_path / "o" / "a.png", textured(rng))
    manifest = data.load_manifest(root)
    rec = metrics.evaluate_set(manifest, tmp_path / "o").records[0]
    assert "psnr" not in rec and "r" in rec


def test_csv_layout_and_round_trip(tmp_path, three_set):
    manifest, outs = three_set
    report = metrics.evaluate_set(manifest, outs, "m")
    path = report.write_csv(tmp_path / "m.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["id", *metrics.METRIC_NAMES]
    assert [r[0] for r in rows[1:4]] == ["im0", "im1", "im2"]
    assert rows[4] == []
    assert [r[0] for r in rows[5:8]] == ["#mean", "#std", "#count"]
    back = metrics.read_report_csv(path)
    for a, b in zip(back.records, report.records):
        for k in metrics.METRIC_NAMES:
            assert a[k] == b[k]


def test_markdown_table_columns(three_set):
    manifest, outs = three_set
    a = metrics.evaluate_set(manifest, outs, "alpha")
    b = metrics.evaluate_set(manifest, outs, "beta")
    table = metrics.markdown_table([a, b], "toy")
    lines = table.strip().splitlines()
    assert lines[0] == "| Dataset | Metric | alpha | beta |"
    assert len(lines) == 2 + len(metrics.METRIC_NAMES)
    assert "toy (3 images)" in lines[2]
    assert all(line.count("±") == 2 for line in lines[2:])
