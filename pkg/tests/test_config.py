import pytest

from leodet.config import CLASS_PROFILES, default_config, load_config
from leodet.errors import InvalidConfigError


def write_config(tmp_path, text):
    path = tmp_path / "pipeline.toml"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadConfig:
    def test_defaults_without_file(self, monkeypatch):
        monkeypatch.delenv("LEOD_CONFIG", raising=False)
        cfg = load_config()
        assert cfg["nms"]["tau"] == 0.45
        assert cfg["thresholds"]["tau_hard_car"] == 0.6
        assert cfg["tracker"]["tau_del"] == 0.55

    def test_file_overrides(self, tmp_path):
        path = write_config(tmp_path, """
[thresholds]
tau_hard_car = 0.5
t_trk = 4

[thresholds.overrides]
pedestrian = 0.5

[soft]
rule = "or"
""")
        cfg = load_config(path)
        assert cfg["thresholds"]["tau_hard_car"] == 0.5
        assert cfg["thresholds"]["t_trk"] == 4
        assert cfg["thresholds"]["overrides"] == {"pedestrian": 0.5}
        assert cfg["soft"]["rule"] == "or"
        # untouched sections keep defaults
        assert cfg["tracker"]["decay"] == 0.9

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "[nonsense]\nx = 1\n")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, "[tracker]\nspeed = 3\n")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_wrong_type_rejected(self, tmp_path):
        path = write_config(tmp_path, '[tracker]\ntau_del = "high"\n')
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(InvalidConfigError):
            load_config(tmp_path / "absent.toml")

    def test_env_fallback(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, "[nms]\ntau = 0.6\n")
        monkeypatch.setenv("LEOD_CONFIG", str(path))
        assert load_config()["nms"]["tau"] == 0.6


class TestDigest:
    def test_stable_across_loads(self, tmp_path):
        path = write_config(tmp_path, "[nms]\ntau = 0.5\n")
        assert load_config(path).digest == load_config(path).digest

    def test_differs_on_change(self, tmp_path):
        a = load_config(write_config(tmp_path, "[nms]\ntau = 0.5\n"))
        b = default_config()
        assert a.digest != b.digest

    def test_identical_to_defaults_when_empty(self, tmp_path):
        path = write_config(tmp_path, "")
        assert load_config(path).digest == default_config().digest


class TestDerivedObjects:
    def test_threshold_config_from_profile(self):
        cfg = default_config()
        th = cfg.threshold_config()
        assert th.tau_hard == (0.6, 0.3)
        assert th.t_trk == 6

    def test_1mpx_profile(self, tmp_path):
        path = write_config(tmp_path, '[thresholds]\nprofile = "1mpx"\n')
        cfg = load_config(path)
        assert cfg.class_names() == CLASS_PROFILES["1mpx"]
        assert len(cfg.threshold_config().tau_hard) == 3

    def test_explicit_classes_override_profile(self, tmp_path):
        path = write_config(tmp_path, '[thresholds]\nclasses = ["car", "pedestrian", "truck"]\n')
        assert load_config(path).class_names() == ["car", "pedestrian", "truck"]

    def test_invalid_thresholds_surface_on_derive(self, tmp_path):
        path = write_config(tmp_path, "[thresholds]\ntau_hard_car = 0.95\n")
        with pytest.raises(InvalidConfigError):
            load_config(path).threshold_config()

    def test_iou_set_parsing(self, tmp_path):
        assert len(default_config().iou_thresholds()) == 10
        path = write_config(tmp_path, '[eval]\niou_set = "0.5,0.75"\n')
        assert load_config(path).iou_thresholds() == [0.5, 0.75]
        bad = write_config(tmp_path, '[eval]\niou_set = "zero"\n')
        with pytest.raises(InvalidConfigError):
            load_config(bad).iou_thresholds()


class TestSizeFilterProfiles:
    def test_gen1_defaults(self):
        filt = default_config().eval_filter()
        assert (filt.min_diagonal, filt.min_side) == (30.0, 10.0)

    def test_1mpx_defaults(self, tmp_path):
        path = write_config(tmp_path, '[thresholds]\nprofile = "1mpx"\n')
        filt = load_config(path).eval_filter()
        assert (filt.min_diagonal, filt.min_side) == (60.0, 20.0)

    def test_explicit_sizes_win(self, tmp_path):
        path = write_config(tmp_path, '[eval]\nmin_diagonal = 5.0\nmin_side = 2.0\n')
        filt = load_config(path).eval_filter()
        assert (filt.min_diagonal, filt.min_side) == (5.0, 2.0)

    def test_unknown_profile_unfiltered(self, tmp_path):
        path = write_config(
            tmp_path, '[thresholds]\nprofile = "gen1"\nclasses = ["car"]\n'
        )
        assert load_config(path).eval_filter().min_diagonal == 30.0
