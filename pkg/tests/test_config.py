import json

import pytest

from cgnn.config import DEFAULT_CONFIG, ConfigError, cgnn_config, config_hash, load_config, seed_of
from cgnn.network import CgnnConfig


def test_defaults_give_the_desk_network():
    cfg = load_config(env={})
    assert cfg == DEFAULT_CONFIG
    c = cgnn_config(cfg)
    assert c == CgnnConfig()
    assert c.output_scale == 4


def test_file_and_overrides_merge(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epochs": 3}, "cgnn": {"activation": {"kind": "hp"}}}))
    cfg = load_config(path, {"train": {"beta": 0.5}}, env={})
    assert cfg["train"]["epochs"] == 3 and cfg["train"]["beta"] == 0.5
    assert cfg["train"]["batch"] == 32
    assert cfg["cgnn"]["activation"] == {"kind": "hp"}
    assert cgnn_config(cfg).activation.kind == "hp"


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"train": {"epoch": 3}},
    {"cgnn": {"activation": {"kind": "swish"}}},
    {"wavelet": {"N": 11}},
    {"inverse": {"h": 0}},
    {"train": {"lr": -1.0}},
])
def test_schema_rejects_bad_documents(tmp_path, doc):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(path, env={})


def test_seed_environment_override():
    assert load_config(env={"CGNN_SEED": "7"})["seeds"]["base"] == 7
    assert load_config(env={"CGNN_SEED": " "})["seeds"]["base"] == 0
    with pytest.raises(ConfigError):
        load_config(env={"CGNN_SEED": "seven"})
    cfg = load_config(None, {"seeds": {"base": 2}}, env={"CGNN_SEED": "9"})
    assert cfg["seeds"]["base"] == 9


def test_seed_streams_are_distinct():
    cfg = load_config(env={"CGNN_SEED": "3"})
    seeds = {seed_of(cfg, p) for p in ("data", "init", "train", "noise", "landweber", "probe")}
    assert len(seeds) == 6
    with pytest.raises(KeyError):
        seed_of(cfg, "other")


def test_hash_ignores_output_dir():
    a = load_config(overrides={"output_dir": "x"}, env={})
    b = load_config(overrides={"output_dir": "y"}, env={})
    c = load_config(overrides={"train": {"epochs": 2}}, env={})
    assert config_hash(a) == config_hash(b) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_grid_must_be_power_of_two():
    with pytest.raises(ConfigError):
        cgnn_config(load_config(overrides={"train": {"grid_size": 1000}}, env={}))


def test_inconsistent_network_is_a_config_error():
    with pytest.raises(ConfigError):
        cgnn_config(load_config(overrides={"cgnn": {"channels": [4, 2], "strides": [1, 1]}}, env={}))
