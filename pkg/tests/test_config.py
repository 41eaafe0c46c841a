import logging

import yaml

from xfer.config import Config


def test_defaults_without_a_file(tmp_path):
    config = Config(str(tmp_path / "missing.yaml"))
    model = config.get_model_config(50)
    assert (model.vocab_size, model.d_model, model.max_seq_len) == (50, 64, 180)
    assert config.get_finetune_config().lr == 2e-5
    assert config.get_seeds() == [0, 1, 2]
    assert config.get_schedule_config()["enabled"] is False


def test_file_values_merge_over_defaults(small_config):
    model = small_config.get_model_config(50)
    assert model.d_model == 8 and model.tie_mlm_head is True
    assert small_config.get_vocab_sizes() == {"vocab_size": 120, "source_vocab_size": 120, "target_vocab_size": 120}
    assert small_config.get_sgns_config(seed=3).seed == 3
    assert small_config.get_sgns_config().lr == 0.025


def test_harness_settings_use_the_harness_fine_tune_schedule(small_config):
    settings = small_config.get_harness_settings()
    assert settings.finetune.lr == 1e-3
    assert settings.finetune.epochs == 1
    assert settings.finetune.max_len == 32
    assert settings.language.lexicon_size == 16
    assert settings.language.sentence_len_range == (5, 10)
    assert settings.model_config(70).d_model == 8


def test_environment_variable_selects_the_file(monkeypatch, config_file):
    monkeypatch.setenv("XFER_CONFIG", str(config_file))
    assert Config().config_path == str(config_file)
    assert Config().get_model_config(50).d_model == 8


def test_unknown_keys_are_ignored_with_a_warning(tmp_path, caplog):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({"model": {"d_model": 16, "n_experts": 4}}))
    with caplog.at_level(logging.WARNING):
        assert Config(str(path)).get_model_config(50).d_model == 16
    assert "n_experts" in caplog.text


def test_malformed_file_falls_back_to_defaults(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("- just\n- a list\n")
    assert Config(str(path)).get_model_config(50).d_model == 64


def test_schedule_updates_are_saved(small_config, config_file):
    small_config.update_schedule_config(True, "*/5 * * * *", grid="grids/embedding_freeze.json")
    reloaded = Config(str(config_file))
    schedule = reloaded.get_schedule_config()
    assert schedule["enabled"] is True
    assert schedule["cron"] == "*/5 * * * *"
    assert schedule["grid"] == "grids/embedding_freeze.json"
    assert schedule["out_dir"] == "results/scheduled"
    assert reloaded.get_model_config(50).d_model == 8
