import pytest

from multiband_loc.config import PROFILES, ConfigError, load_config


def test_default_three_band_setup():
    cfg = load_config()
    specs = cfg.bands.specs()
    assert [b.channel for b in specs] == [153, 157, 161]
    assert [b.center_freq for b in specs] == [5.765e9, 5.785e9, 5.805e9]
    assert all(b.n_subcarriers == 64 and b.bandwidth == 20e6 for b in specs)
    assert (cfg.scenario.rp_count, cfg.scenario.tp_count) == (16, 11)


def test_profiles():
    desk = load_config()
    paper = load_config(overrides={"experiment": {"profile": "paper"}})
    assert (desk.data.rp_samples, desk.data.tp_samples) == (2000, 400)
    assert (paper.data.rp_samples, paper.data.tp_samples) == (10000, 2000)
    assert (paper.vae.learning_rate, paper.vae.epochs, paper.vae.beta) == (1e-5, 50, 0.1)
    assert (paper.localizer.learning_rate, paper.localizer.epochs) == (1e-6, 90)
    assert set(PROFILES) == {"desk", "paper"}


def test_layering(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[vae]\nepochs = 7\nlearning_rate = 2e-4\n[experiment]\nsnr_db = 5, 15\nseed = 3\n")
    cfg = load_config(path, {"vae": {"epochs": "9"}})
    assert cfg.vae.epochs == 9  # flag beats file
    assert cfg.vae.learning_rate == 2e-4  # file beats profile
    assert cfg.experiment.snr_db == (5.0, 15.0)
    assert cfg.scenario.seed == 3


def test_none_reference_frequency(tmp_path):
    cfg = load_config(overrides={"paths": {"reference_freq_hz": "0"}})
    assert cfg.paths.reference_freq_hz == 0.0
    assert load_config(overrides={"paths": {"reference_freq_hz": "none"}}).paths.reference_freq_hz is None


@pytest.mark.parametrize(
    "overrides",
    [
        {"nope": {"x": "1"}},
        {"vae": {"nope": "1"}},
        {"vae": {"epochs": "many"}},
        {"experiment": {"schemes": "vae, magic"}},
        {"experiment": {"schemes": ""}},
        {"experiment": {"snr_db": ""}},
        {"experiment": {"profile": "cluster"}},
        {"experiment": {"source_band": "4"}},
        {"experiment": {"figures": "maybe"}},
    ],
)
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/exp.ini")


def test_hash_stable_and_sensitive():
    a, b = load_config(), load_config()
    assert a.hash() == b.hash()
    assert load_config(overrides={"experiment": {"seed": "1"}}).hash() != a.hash()


def test_resolved_text_round_trips(tmp_path):
    cfg = load_config(overrides={"vae": {"beta": "0.25"}, "experiment": {"snr_db": "12.5"}})
    path = tmp_path / "resolved.ini"
    path.write_text(cfg.resolved_text())
    assert load_config(path).hash() == cfg.hash()
