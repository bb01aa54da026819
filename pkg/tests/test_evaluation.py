import json
import math

import numpy as np
import pytest

from intrinsic_hdr import evaluation as ev
from intrinsic_hdr import pu21
from intrinsic_hdr.image import luminance
from intrinsic_hdr.isp import generate_scene


@pytest.fixture(scope="module")
def gt():
    return generate_scene(3).hdr_gt


class TestMapToRange:
    def test_endpoints(self):
        g = np.array([[1e-6, 1e-3], [0.5, 1.0]])[:, :, None] * 7.0
        out = ev.map_to_range(g)
        assert out.max() == 1000.0
        assert out[0, 1, 0] == pytest.approx(1.0)
        assert out[0, 0, 0] == 1.0

    def test_all_zero(self):
        with pytest.raises(ev.EvaluationError):
            ev.map_to_range(np.zeros((2, 2, 3)))


class TestAlignScale:
    def test_exact_multiple(self, gt):
        assert ev.align_scale(2 * gt, gt) == 0.5
        assert ev.align_scale(gt, gt) == 1.0

    def test_outliers_outside_window_ignored(self, gt):
        lum = luminance(gt)[:, :, 0]
        lo, hi = np.percentile(lum, 10, method="inverted_cdf"), np.percentile(lum, 90, method="inverted_cdf")
        inside = (lum >= lo) & (lum <= hi)
        pred = 1.7 * gt
        pred[~inside] *= 40.0
        s = ev.align_scale(pred, gt)
        # brute-force scan of the windowed squared error
        grid = np.linspace(0.4, 0.8, 40001)
        pw, gw = pred[inside], gt[inside]
        errs = [np.sum((c * pw - gw) ** 2) for c in grid]
        assert abs(grid[int(np.argmin(errs))] - s) <= 1e-5
        assert s == pytest.approx(1 / 1.7, rel=1e-12)

    def test_minimises_windowed_error(self, gt):
        rng = np.random.default_rng(0)
        pred = gt * rng.uniform(0.5, 2.0, gt.shape)
        s = ev.align_scale(pred, gt)
        mask = ev._window(gt)
        err = lambda c: np.sum((c * pred[mask] - gt[mask]) ** 2)  # noqa: E731
        assert all(err(s) <= err(c) for c in np.linspace(0.1, 3, 300))

    def test_zero_prediction(self, gt):
        with pytest.raises(ev.EvaluationError):
            ev.align_scale(np.zeros_like(gt), gt)


class TestCrf:
    def test_identity(self, gt):
        coeffs = ev.fit_crf_correction(gt, gt)
        np.testing.assert_allclose(coeffs, np.tile([0, 1, 0, 0], (3, 1)), atol=1e-8)

    def test_square_law(self, gt):
        coeffs = ev.fit_crf_correction(gt**2, gt)
        np.testing.assert_allclose(coeffs, np.tile([0, 0.5, 0, 0], (3, 1)), atol=1e-8)

    def test_cubic_recovered(self):
        rng = np.random.default_rng(1)
        x = np.exp(rng.uniform(-2, 2, (32, 32, 3)))
        a = np.array([[0.1, 0.9, 0.05, -0.01], [-0.2, 1.1, 0.0, 0.02], [0.0, 0.8, -0.03, 0.01]])
        lx = np.log(x)
        gt = np.stack([np.exp(np.polyval(a[c, ::-1], lx[:, :, c])) for c in range(3)], axis=2)
        np.testing.assert_allclose(ev.fit_crf_correction(x, gt), a, atol=1e-6)

    def test_never_worse_than_identity(self, gt):
        pred = gt**0.7 * 1.3 + 0.01
        coeffs = ev.fit_crf_correction(pred, gt)
        before = np.sum((np.log(pred) - np.log(gt)) ** 2)
        after = np.sum((np.log(ev.apply_crf_correction(pred, coeffs)) - np.log(gt)) ** 2)
        assert after <= before

    def test_degenerate(self):
        with pytest.raises(ev.EvaluationError, match="degenerate CRF fit"):
            ev.fit_crf_correction(np.full((4, 4, 3), 0.5), np.random.default_rng(2).uniform(0.1, 1, (4, 4, 3)))


class TestEvaluate:
    def test_identity(self, gt):
        r = ev.evaluate(gt, gt)
        assert r.rmse_linear == 0.0 and math.isinf(r.pu21_psnr)
        assert r.to_dict()["pu21_psnr"] == "inf"

    def test_doubling_matches_identity(self, gt):
        a, b = ev.evaluate(gt, gt), ev.evaluate(2 * gt, gt)
        assert b.scale == 0.5
        assert (a.rmse_linear, a.pu21_psnr, a.crf_coeffs) == (b.rmse_linear, b.pu21_psnr, b.crf_coeffs)

    @pytest.mark.parametrize("k", [1e-3, 0.37, 3.0, 250.0])
    def test_scale_invariance(self, gt, k):
        pred = gt**0.9 * np.random.default_rng(3).uniform(0.9, 1.1, gt.shape)
        a, b = ev.evaluate(pred, gt), ev.evaluate(k * pred, gt)
        assert b.rmse_linear == pytest.approx(a.rmse_linear, rel=1e-9, abs=1e-9)
        assert b.pu21_psnr == pytest.approx(a.pu21_psnr, rel=1e-9)

    def test_crf_correction_helps(self, gt):
        pred = gt**0.6
        s = ev.align_scale(pred, gt)
        factor = ev.range_factor(gt)
        ref, scaled = ev.map_to_range(gt, factor), ev.map_to_range(s * pred, factor)
        before = np.sqrt(np.mean((scaled - ref) ** 2))
        assert ev.evaluate(pred, gt).rmse_linear < before

    def test_shape_mismatch(self, gt):
        with pytest.raises(ev.EvaluationError):
            ev.evaluate(gt[:-1], gt)


class TestReports:
    def test_json_sorted_with_aggregate(self, gt):
        reports = [ev.evaluate(gt**0.9, gt, "b"), ev.evaluate(gt, gt, "a")]
        doc = json.loads(ev.reports_to_json(reports))
        assert [r["image_id"] for r in doc["images"]] == ["a", "b"]
        assert doc["aggregate"]["count"] == 2
        assert set(doc["aggregate"]) == {"count", "scale", "pu21_psnr", "rmse_linear"}

    def test_csv_columns(self, gt):
        text = ev.reports_to_csv([ev.evaluate(gt, gt, "x")])
        header, row = text.strip().split("\n")
        assert header.split(",")[:5] == ["image_id", "scale", "pu21_psnr", "rmse_linear", "pu21_clamped"]
        assert len(header.split(",")) == 5 + 12
        assert row.split(",")[2] == "inf"


class TestPu21:
    def test_monotone(self):
        y = np.geomspace(pu21.L_MIN, pu21.L_MAX, 2000)
        assert np.all(np.diff(pu21.encode(y)[0]) > 0)

    def test_clamping_flagged(self):
        values, n = pu21.encode(np.array([1e-4, 1.0, 2e4]))
        assert n == 2
        assert values[0] == pu21.encode(np.array([pu21.L_MIN]))[0][0]
        assert values[2] == pu21.peak()

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            pu21.encode(np.ones(2), "nope")
