"""TOML loading, environment-variable overrides, and the [prior]
section builder."""

import pytest

from survpfn.config import (
    apply_env_overrides,
    load_toml,
    parse_env_value,
    prior_config_from_dict,
    reject_leftovers,
    take,
)
from survpfn.errors import ConfigError
from survpfn.prior import PriorConfig


def test_load_toml(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('[train]\nsteps = 50\nloss = "nll"\n')
    assert load_toml(path) == {"train": {"steps": 50, "loss": "nll"}}


def test_load_toml_reports_syntax_position(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[train\nsteps = 1\n")
    with pytest.raises(ConfigError, match="line"):
        load_toml(path)


def test_load_toml_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_toml(tmp_path / "absent.toml")


def test_parse_env_value_literals():
    assert parse_env_value("3") == 3
    assert parse_env_value("0.5") == 0.5
    assert parse_env_value("true") is True
    assert parse_env_value('"quoted"') == "quoted"
    assert parse_env_value("[1, 2]") == [1, 2]
    assert parse_env_value("plain-string") == "plain-string"


def test_env_overrides_overlay_and_create_sections():
    cfg = {"train": {"steps": 10, "loss": "nll"}}
    env = {
        "SURVPFN_TRAIN__STEPS": "50",
        "SURVPFN_MODEL__HIDDEN": "32",
        "UNRELATED": "1",
        "SURVPFN_NOSEPARATOR": "1",  # no __: ignored
    }
    out = apply_env_overrides(cfg, env)
    assert out == {"train": {"steps": 50, "loss": "nll"}, "model": {"hidden": 32}}
    assert cfg == {"train": {"steps": 10, "loss": "nll"}}  # input untouched


def test_env_overrides_nested_path():
    out = apply_env_overrides({}, {"SURVPFN_A__B__C": "7"})
    assert out == {"a": {"b": {"c": 7}}}


def test_env_overrides_malformed():
    with pytest.raises(ConfigError):
        apply_env_overrides({}, {"SURVPFN_TRAIN__": "1"})
    with pytest.raises(ConfigError):
        apply_env_overrides({"train": {"steps": 5}}, {"SURVPFN_TRAIN__STEPS__X": "1"})


def test_take_and_leftovers():
    table = {"a": 1, "b": 2}
    assert take(table, "a") == 1
    assert take(table, "missing", default=9) == 9
    with pytest.raises(ConfigError):
        take(table, "absent", required=True)
    with pytest.raises(ConfigError, match="'b'"):
        reject_leftovers(table, "[test]")
    reject_leftovers({}, "[test]")


def test_prior_section_defaults():
    assert prior_config_from_dict({}) == PriorConfig()


def test_prior_section_forces_family():
    cfg = prior_config_from_dict({"family": "mixture"})
    assert cfg.family_weights == (0.0, 0.0, 1.0, 0.0)
    cfg = prior_config_from_dict({"family": "naive"})
    assert cfg.family_weights == (1.0, 0.0, 0.0, 0.0)
    assert prior_config_from_dict({"family": "kitchen_sink"}) == PriorConfig()


def test_prior_section_forces_censoring():
    cfg = prior_config_from_dict({"censoring": "administrative"})
    assert cfg.censoring_weights == (0.0, 0.0, 1.0, 0.0)


def test_prior_section_ranges_and_probe():
    cfg = prior_config_from_dict(
        {"d_range": [2, 5], "t_max_range": [1.0, 10.0], "calibration_probe": 256}
    )
    assert cfg.d_range == (2, 5)
    assert cfg.t_max_range == (1.0, 10.0)
    assert cfg.calibration_probe == 256


def test_prior_section_ignores_corpus_shape_keys():
    cfg = prior_config_from_dict({"n_tasks": 5, "n_ctx": 64, "seed": 3, "format": "jsonl"})
    assert cfg == PriorConfig()


def test_prior_section_rejects_unknowns():
    with pytest.raises(ConfigError):
        prior_config_from_dict({"family": "gamma"})
    with pytest.raises(ConfigError):
        prior_config_from_dict({"censoring": "never"})
    with pytest.raises(ConfigError):
        prior_config_from_dict({"wat": 1})
