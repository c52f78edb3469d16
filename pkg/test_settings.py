import pytest
import yaml

from errors import UsageError
from settings import DEFAULT_SEED, SEED_ENV, Settings, flatten, load_config, resolve_seed
from training import TrainConfig


def _write_config(tmp_path, data, name="user.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


class TestLoadConfig:

    def test_defaults_come_from_settings_yaml(self):
        settings = load_config()
        assert settings.model.d_h == 32
        assert settings.beam.width == 50
        assert settings.baselines.noisy_top_n == 100
        assert settings.paths.checkpoint is None

    def test_user_file_is_layered_over_defaults(self, tmp_path):
        settings = load_config(_write_config(tmp_path, {"train": {"max_epochs": 3}}))
        assert settings.train.max_epochs == 3
        assert settings.train.learning_rate == 0.002

    def test_overrides_beat_user_file(self, tmp_path):
        path = _write_config(tmp_path, {"corpus": {"vocab_size": 100}})
        settings = load_config(path, {"corpus": {"vocab_size": 50}})
        assert settings.corpus.vocab_size == 50

    def test_unknown_key_is_rejected_by_name(self, tmp_path):
        with pytest.raises(UsageError, match="learning_rat"):
            load_config(_write_config(tmp_path, {"train": {"learning_rat": 0.1}}))

    def test_unknown_section_is_rejected(self, tmp_path):
        with pytest.raises(UsageError, match="decoder"):
            load_config(_write_config(tmp_path, {"decoder": {"width": 3}}))

    def test_out_of_range_value(self, tmp_path):
        with pytest.raises(UsageError, match="beam.width"):
            load_config(_write_config(tmp_path, {"beam": {"width": 0}}))

    def test_log_level_is_case_insensitive(self, tmp_path):
        assert load_config(_write_config(tmp_path, {"app": {"log_level": "debug"}})).app.log_level == "DEBUG"

    def test_unknown_log_level(self, tmp_path):
        with pytest.raises(UsageError, match="app.log_level"):
            load_config(_write_config(tmp_path, {"app": {"log_level": "LOUD"}}))

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("train: [unclosed\n", encoding="utf-8")
        with pytest.raises(UsageError, match="not valid YAML"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError, match="not found"):
            load_config(tmp_path / "absent.yaml")


class TestSeed:

    def test_flag_wins(self):
        assert resolve_seed(5, Settings(seed=7), {SEED_ENV: "9"}) == 5

    def test_environment_beats_config(self):
        assert resolve_seed(None, Settings(seed=7), {SEED_ENV: "9"}) == 9

    def test_config_beats_default(self):
        assert resolve_seed(None, Settings(seed=7), {}) == 7

    def test_default(self):
        assert resolve_seed(None, Settings(), {}) == DEFAULT_SEED

    def test_environment_must_be_an_integer(self):
        with pytest.raises(UsageError, match=SEED_ENV):
            resolve_seed(None, Settings(), {SEED_ENV: "abc"})


def test_flatten_is_sorted_section_keys():
    flat = flatten(Settings(seed=3))
    assert list(flat) == sorted(flat)
    assert flat["train.max_epochs"] == "20"
    assert flat["seed"] == "3"
    assert flat["paths.out"] == "None"


def test_train_config_drops_cli_only_fields():
    config = load_config().train.train_config(seed=42)
    assert type(config) is TrainConfig
    assert config.seed == 42
    assert config.batch_size == 16
