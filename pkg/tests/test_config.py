import pytest

from parawave import config as config_mod
from parawave.config import PRESETS, from_text, load, parse_components, preset
from parawave.errors import ConfigError


@pytest.mark.parametrize("name", PRESETS)
def test_presets_validate(name):
    cfg = preset(name).validate()
    assert cfg.run.preset == name
    assert len(cfg.student_layers()) == len(cfg.student_reverse())


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("huge")


def test_full_scale_preset_sizes():
    cfg = preset("paper-shape")
    assert cfg.stft().bins == 1025
    assert cfg.teacher_net().layers == 20 and cfg.teacher_net().residual_channels == 128
    assert sum(cfg.student_layers()) == 60


def test_text_round_trip_preserves_digest():
    cfg = preset("smoke")
    cfg.set("distill.lam", "2.5")
    again = from_text(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert again.digest() == cfg.digest()
    assert again.distill_config().lam == 2.5


def test_set_parses_by_type():
    cfg = preset("smoke")
    cfg.set("data.random_phase", "off")
    cfg.set("teacher.steps", "1e3")
    cfg.set("optim.lr", "0.01")
    assert cfg.data.random_phase is False
    assert cfg.teacher.steps == 1000
    assert cfg.optim.lr == 0.01
    for bad in ("nope.key", "data.nope", "teacher"):
        with pytest.raises(ConfigError):
            cfg.set(bad, "1")
    with pytest.raises(ConfigError):
        cfg.set("teacher.steps", "many")


def test_load_with_overrides_and_seed_env(tmp_path, monkeypatch):
    path = tmp_path / "c.ini"
    preset("smoke").save(path)
    cfg = load(path, ["run.seed=4"])
    assert cfg.run.seed == 4
    monkeypatch.setenv(config_mod.SEED_ENV, "9")
    assert load(path, ["run.seed=4"]).run.seed == 9
    with pytest.raises(ConfigError):
        load(path, ["run.seed"])
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.ini")


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        from_text("[data]\nfft_size = 100\n").validate()
    with pytest.raises(ConfigError):
        from_text("[distill]\nkl_direction = up\n").validate()
    with pytest.raises(ConfigError):
        from_text("[mystery]\na = 1\n")
    with pytest.raises(ConfigError):
        from_text("[student]\nlayers = 2,2\nreverse_time = 0\n").validate()


def test_components_parse():
    assert parse_components("220:0.4, 470:0.2") == [(220.0, 0.4), (470.0, 0.2)]
    with pytest.raises(ConfigError):
        parse_components("220")
