import json
import math
import struct

import pytest
import yaml

from sub2full.config import DEFAULTS, ExperimentConfig, load_config
from sub2full.formats import read_octb, read_octi
from sub2full.metrics import read_metrics_csv
from sub2full.net import read_checkpoint
from sub2full.pipeline import COMPARE_ROWS, select_frames

from conftest import TINY_CONFIG, compare_trees, run_cli, run_full_pipeline


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("run_a"), tmp_path_factory.mktemp("run_b")
    run_full_pipeline(TINY_CONFIG, a)
    run_full_pipeline(TINY_CONFIG, b)
    return a, b


def write_config(tmp_path, **overrides):
    path = tmp_path / "c.yaml"
    base = yaml.safe_load(TINY_CONFIG.read_text())
    for section, values in overrides.items():
        if isinstance(values, dict):
            base.setdefault(section, {}).update(values)
        else:
            base[section] = values
    path.write_text(yaml.safe_dump(base))
    return path


class TestFailFast:
    def test_off_grid_window(self, tmp_path):
        cfg = write_config(tmp_path, schemes={"centers": [0.05, 0.5]})
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == 2
        assert not (tmp_path / "o" / "volume.octi").exists()

    def test_unknown_scheme(self, tmp_path):
        assert run_cli("train", "--scheme", "n2s", "--config", TINY_CONFIG, "--out", tmp_path) == 2

    @pytest.mark.parametrize(
        "overrides",
        [
            {"train": {"patch_size": 30}},
            {"rois": {"background": [0, 10, 0, 500], "structures": {"a": [20, 30, 0, 10]}}},
            {"bogus_section": 1},
            {"volume": {"n_repeats": 1}},
            {"noise": {"noise_mode": "shot"}},
            {"evaluation": {"n_images": 99}},
            {"phantom": {"depth_extent": 400.0}},
        ],
    )
    def test_inconsistent_configs(self, tmp_path, overrides):
        cfg = write_config(tmp_path, **overrides)
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == 2
        assert not (tmp_path / "o" / "volume.octi").exists()

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run_cli("simulate", "--config", TINY_CONFIG, "--out", blocker / "sub") == 2

    def test_missing_volume_is_runtime_error(self, tmp_path, capsys):
        assert run_cli("train", "--scheme", "s2f", "--config", TINY_CONFIG, "--out", tmp_path) == 3
        assert "volume.octi" in capsys.readouterr().err

    def test_defaults_validate(self):
        ExperimentConfig().validate(check_output=False)


class TestPipeline:
    def test_idempotent(self, tiny_runs):
        assert compare_trees(*tiny_runs) == []

    def test_octi_header_matches_config(self, tiny_runs):
        out, _ = tiny_runs
        cfg = load_config(TINY_CONFIG)
        raw = (out / "volume.octi").read_bytes()
        magic, version, n_k, n_alines, n_bscans, n_repeats, k_min, k_max = struct.unpack_from("<4s5I2d", raw)
        assert (magic, version) == (b"OCTI", 1)
        assert (n_k, n_alines, n_bscans, n_repeats) == (512, 64, 6, 2)
        spectrum = cfg.spectrum()
        assert (k_min, k_max) == (spectrum.k[0], spectrum.k[-1])
        assert len(raw) == struct.calcsize("<4s5I2d") + 4 * n_k * n_alines * n_bscans * n_repeats
        assert len(read_octi(out / "test_volume.octi")) == 3

    def test_provenance_manifests(self, tiny_runs):
        out, _ = tiny_runs
        cfg = load_config(TINY_CONFIG)
        manifests = list(out.rglob("*.manifest.json"))
        assert len(manifests) >= 10
        for m in manifests:
            body = json.loads(m.read_text())
            assert body["config_hash"] == cfg.hash() or m.parent.parent.name == "sweep"
            assert body["seed"] == 5
        sim = json.loads((out / "simulate.manifest.json").read_text())
        assert ExperimentConfig({**sim["config"], "output_dir": "x"}).hash() == cfg.hash()

    def test_history_and_resume(self, tiny_runs, tmp_path):
        out, _ = tiny_runs
        header = (out / "models" / "s2f_history.csv").read_text().splitlines()
        assert header[0] == "epoch,train_loss,val_loss,seconds"
        assert len(header) == 1 + 1 + 2
        work = tmp_path / "w"
        work.mkdir()
        for name in ("volume.octi", "test_volume.octi"):
            (work / name).write_bytes((out / name).read_bytes())
        (work / "models").mkdir()
        (work / "models" / "n2n.s2fw").write_bytes((out / "models" / "n2n.s2fw").read_bytes())
        t0 = read_checkpoint(work / "models" / "n2n.s2fw")[1].t
        assert run_cli("train", "--scheme", "n2n", "--resume", "--config", TINY_CONFIG, "--out", work) == 0
        assert read_checkpoint(work / "models" / "n2n.s2fw")[1].t == 2 * t0

    def test_compare_table(self, tiny_runs):
        out, _ = tiny_runs
        rows = read_metrics_csv(out / "comparison.csv")
        per_image = [r for r in rows if r["image_id"] != "mean"]
        assert [r["scheme"] for r in rows if r["image_id"] == "mean"] == list(COMPARE_ROWS)
        assert len(per_image) == 3 * len(COMPARE_ROWS)
        for name in ("comparison.png", "comparison_panels.png"):
            assert (out / name).read_bytes()[:4] == b"\x89PNG"
        assert len(list((out / "compare_previews").glob("*.pgm"))) == 5

    def test_reconstruct_outputs(self, tiny_runs):
        out, _ = tiny_runs
        files = sorted(p.name for p in (out / "recon").glob("*.octb"))
        assert len(files) == 2 * 2 * 4
        img = read_octb(out / "recon" / "bscan000_r1_sub0.35.octb")
        assert img.shape == (256, 64) and img.scale == "log_normalized"

    def test_sweep_rows(self, tiny_runs):
        out, _ = tiny_runs
        rows = read_metrics_csv(out / "sweep_bandwidth.csv")
        assert [r["beta"] for r in rows] == ["0.25", "0.50"]
        fwhm = [float(r["input_fwhm_px"]) for r in rows]
        assert fwhm[0] > fwhm[1] > float(rows[0]["full_fwhm_px"])

    def test_single_beta_sweep(self, tiny_runs, tmp_path):
        out, _ = tiny_runs
        for name in ("volume.octi", "test_volume.octi"):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        assert run_cli("sweep-bandwidth", "--betas", "0.5", "--config", TINY_CONFIG, "--out", tmp_path) == 0
        assert len(read_metrics_csv(tmp_path / "sweep_bandwidth.csv")) == 1

    def test_finetune_report(self, tiny_runs):
        out, _ = tiny_runs
        rows = read_metrics_csv(out / "finetune" / "report.csv")
        assert rows[0]["model"] == "finetune"
        assert int(rows[0]["n_frames"]) == math.ceil(0.5 * 3)
        assert float(rows[0]["wall_seconds"]) > 0
        assert len(list((out / "finetune").glob("bscan*.octb"))) == 3

    def test_missing_checkpoint_named(self, tiny_runs, tmp_path, capsys):
        out, _ = tiny_runs
        for name in ("volume.octi", "test_volume.octi"):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        assert run_cli("compare", "--config", TINY_CONFIG, "--out", tmp_path) == 3
        assert "s2f.s2fw" in capsys.readouterr().err


class TestFrameSelection:
    def test_ten_percent_of_500(self):
        frames = select_frames(500, 0.10, seed=0)
        assert len(frames) == 50 == len(set(frames))

    def test_full_fraction_is_everything(self):
        assert select_frames(37, 1.0, seed=3) == list(range(37))

    def test_ceiling(self):
        assert len(select_frames(64, 0.1, seed=0)) == 7

    @pytest.mark.parametrize("fraction", [0.0, 1.5, -0.1])
    def test_invalid(self, fraction):
        with pytest.raises(ValueError):
            select_frames(10, fraction, seed=0)


def test_full_scale_preset_is_valid():
    cfg = load_config(TINY_CONFIG.parent / "full_scale.yaml")
    cfg.validate(check_output=False)
    assert cfg.phantom_spec().lateral_extent == 500
    assert cfg.raw["volume"]["n_repeats"] == 2
    assert cfg.raw["train"]["batch_size"] == 2 and cfg.raw["train"]["learning_rate"] == 1e-3


def test_defaults_documented_in_reference_config():
    assert yaml.safe_load((TINY_CONFIG.parent / "reference.yaml").read_text()) == DEFAULTS
