import math

import numpy as np
import pytest

from sub2full import ValidationError
from sub2full.metrics import (
    Roi,
    cnr,
    mean_report,
    metrics_report,
    psnr,
    read_metrics_csv,
    snr,
    var_metric,
    write_metrics_csv,
)

BG = Roi((0, 10), (0, 10), "background", "bg")


def with_background(std_values, size=(40, 40)):
    img = np.zeros(size)
    img[:10, :10] = std_values
    return img


def two_level(n=10):
    """Background ROI values ±1 (σ_B = 1), so σ_B² is exactly 1."""
    return np.resize([-1.0, 1.0], (n, n))


class TestSnr:
    def test_forty_db(self):
        img = with_background(two_level())
        img[30, 30] = 100.0
        assert snr(img, BG) == pytest.approx(40.0, abs=1e-9)

    def test_unit_ratio(self):
        img = with_background(two_level())
        assert snr(img, BG) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("alpha", [0.01, 3.0, 1e4])
    def test_scale_invariant(self, alpha):
        img = np.random.default_rng(0).random((40, 40))
        assert snr(alpha * img, BG) == pytest.approx(snr(img, BG), abs=1e-9)

    def test_flat_background(self):
        with pytest.raises(ValidationError):
            snr(np.ones((20, 20)), BG)


class TestCnr:
    def test_zero_db_case(self):
        # μ_i − μ_B = 10 and σ_i² − σ_B² = 101 − 1 = 100
        img = with_background(two_level())
        s = np.sqrt(101.0)
        img[20:30, 20:30] = 10.0 + s * two_level()
        roi = Roi((20, 30), (20, 30), "structure", "s")
        assert cnr(img, [roi], BG) == pytest.approx(0.0, abs=1e-9)

    def test_mean_over_rois(self):
        img = with_background(two_level())
        img[20:30, 20:30] = 10.0 + np.sqrt(101.0) * two_level()
        img[30:40, 30:40] = 100.0 + np.sqrt(101.0) * two_level()
        rois = [Roi((20, 30), (20, 30)), Roi((30, 40), (30, 40))]
        assert cnr(img, rois, BG) == pytest.approx(0.5 * (0.0 + 10.0), abs=1e-9)

    @pytest.mark.parametrize("alpha", [0.01, 3.0, 1e4])
    def test_scale_invariant(self, alpha):
        img = np.random.default_rng(0).random((40, 40))
        img[20:] *= 3
        img[20:] += 1
        rois = [Roi((20, 30), (0, 40)), Roi((30, 40), (5, 25))]
        assert cnr(alpha * img, rois, BG) == pytest.approx(cnr(img, rois, BG), abs=1e-9)

    def test_smooth_structure_clamped_and_flagged(self):
        img = with_background(two_level())
        img[20:30, 20:30] = 5.0
        flags = []
        value = cnr(img, [Roi((20, 30), (20, 30), name="flat")], BG, flags=flags)
        assert flags == ["cnr_clamp:flat"]
        assert value == pytest.approx(10 * math.log10(5.0 / math.sqrt(1e-12)), abs=1e-9)

    def test_sum_variant(self):
        img = with_background(two_level())
        img[20:30, 20:30] = 5.0
        value = cnr(img, [Roi((20, 30), (20, 30))], BG, variant="sum")
        assert value == pytest.approx(10 * math.log10(5.0), abs=1e-9)

    def test_equal_means_named(self):
        img = with_background(two_level())
        with pytest.raises(ValidationError, match="dull"):
            cnr(img, [Roi((20, 30), (20, 30), name="dull")], BG)

    def test_needs_structure(self):
        with pytest.raises(ValidationError):
            cnr(np.ones((20, 20)), [], BG)

    def test_unknown_variant(self):
        with pytest.raises(ValidationError):
            cnr(np.random.default_rng(0).random((20, 20)), [Roi((10, 20), (0, 5))], BG, variant="ratio")


class TestVar:
    def test_constant(self):
        assert var_metric(np.full((5, 7), 3.3)) == pytest.approx(0.0, abs=1e-9)

    def test_two_pixels(self):
        assert var_metric(np.array([[0.0], [2.0]])) == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.parametrize("alpha", [0.5, 7.0])
    def test_degree_one(self, alpha):
        img = np.random.default_rng(1).random((30, 30))
        assert var_metric(alpha * img) == pytest.approx(alpha * var_metric(img), rel=1e-9)

    def test_empty(self):
        with pytest.raises(ValidationError):
            var_metric(np.zeros((0, 3)))


class TestPsnr:
    def test_identical(self):
        img = np.random.default_rng(0).random((8, 8))
        assert psnr(img, img) == math.inf

    def test_uniform_error(self):
        clean = np.full((16, 16), 0.5)
        assert psnr(clean + 0.1, clean) == pytest.approx(20.0, abs=1e-9)

    def test_gaussian_noise(self):
        clean = np.full((256, 256), 0.5)
        noisy = clean + 0.05 * np.random.default_rng(2).standard_normal(clean.shape)
        assert psnr(noisy, clean) == pytest.approx(26.02, abs=0.2)

    def test_shape_and_range(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ValidationError):
            psnr(np.full((2, 2), 1.5), np.zeros((2, 2)))


class TestRoi:
    @pytest.mark.parametrize("rows,cols", [((5, 5), (0, 3)), ((0, 3), (2, 1)), ((0, 50), (0, 3)), ((-1, 3), (0, 3))])
    def test_invalid(self, rows, cols):
        with pytest.raises(ValidationError):
            Roi(rows, cols).check((40, 40))

    def test_reads_only_its_pixels(self):
        img = np.random.default_rng(0).random((40, 40))
        img[35, 35] = 1.0
        rois = [BG, Roi((20, 30), (20, 30), name="a")]
        base = metrics_report(img, rois)
        outside = img.copy()
        outside[12:18, :] = 0.3
        changed = metrics_report(outside, rois)
        assert changed.snr_db == base.snr_db and changed.cnr_db == base.cnr_db


class TestReport:
    rois = [BG] + [Roi((10 * i, 10 * i + 10), (20, 40), "structure", f"s{i}") for i in (1, 2, 3)]

    def image(self, seed):
        rng = np.random.default_rng(seed)
        img = 0.1 * rng.random((40, 40))
        img[10:, 20:] += np.repeat([0.2, 0.5, 0.8], 10)[:, None]
        return img

    def test_protocol_rois_and_optional_psnr(self):
        r = metrics_report(self.image(0), self.rois, image_id="b0", model_id="m", scheme="s2f")
        assert r.psnr_db is None and r.row()["psnr_db"] == ""
        assert len(r.roi_stats) == 4
        r2 = metrics_report(self.image(0), self.rois, clean=self.image(1))
        assert r2.psnr_db is not None and math.isfinite(r2.psnr_db)

    def test_single_background_required(self):
        with pytest.raises(ValidationError):
            metrics_report(self.image(0), self.rois[1:])

    def test_thirty_rows_plus_mean(self, tmp_path):
        reports = [metrics_report(self.image(i), self.rois, image_id=f"b{i}", model_id="m", scheme="n2n") for i in range(30)]
        write_metrics_csv(tmp_path / "m.csv", reports)
        rows = read_metrics_csv(tmp_path / "m.csv")
        assert len(rows) == 31
        assert rows[-1]["image_id"] == "mean"
        assert float(rows[-1]["snr_db"]) == pytest.approx(np.mean([r.snr_db for r in reports]), abs=1e-5)
        assert list(rows[0]) == ["image_id", "model_id", "scheme", "snr_db", "cnr_db", "var_value", "psnr_db", "clamp_flags"]

    def test_mean_report_merges_flags(self):
        a = metrics_report(self.image(0), self.rois)
        a.clamp_flags.append("x")
        assert mean_report([a, a]).clamp_flags == ["x"]
