import pytest

from seaclear import ParameterError, TrainConfig
from seaclear.runconfig import load_config, parse_config, save_config, serialize_config


def test_parse_defaults_from_empty():
    assert parse_config("") == TrainConfig()


def test_parse_overrides_and_comments():
    text = """
# reference run
learning_rate = 0.001
epochs=5   # short
seed=7
image_size=32
"""
    cfg = parse_config(text)
    assert cfg.learning_rate == 0.001
    assert cfg.epochs == 5
    assert cfg.seed == 7
    assert cfg.image_size == 32
    assert cfg.batch_size == TrainConfig().batch_size


def test_unknown_key_rejected():
    with pytest.raises(ParameterError, match="unknown key"):
        parse_config("momentum=0.9")


def test_duplicate_key_rejected():
    with pytest.raises(ParameterError, match="duplicate"):
        parse_config("epochs=1\nepochs=2")


def test_bad_value_rejected():
    with pytest.raises(ParameterError, match="bad value"):
        parse_config("epochs=five")


def test_invalid_config_values_rejected():
    with pytest.raises(ParameterError):
        parse_config("image_size=15")
    with pytest.raises(ParameterError):
        parse_config("dropout_rate=1.0")
    with pytest.raises(ParameterError):
        parse_config("patch=4")


def test_parse_serialize_parse_fixed_point():
    cfg = parse_config("learning_rate=0.0001\nepochs=3\nseed=11\ndropout_rate=0.3")
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


def test_file_round_trip(tmp_path):
    cfg = TrainConfig(epochs=2, seed=5, image_size=48)
    path = tmp_path / "run.cfg"
    save_config(path, cfg)
    assert load_config(path) == cfg


def test_paper_profile_values():
    cfg = TrainConfig.paper_profile()
    assert cfg.learning_rate == 1e-4
    assert cfg.batch_size == 16
    assert cfg.dropout_rate == 0.3
    assert cfg.image_size == 512
