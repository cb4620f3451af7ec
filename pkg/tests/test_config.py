"""YAML configuration loading: round trips, strict key/type checks, env
construction with method/threshold overrides."""

import pickle

import pytest
import yaml

from cbfmarl.config import (ConfigError, EnvFactory, RunConfig, build_env,
                            build_map, cbf_config_of, config_from_dict,
                            config_to_dict, default_config, load_config,
                            save_config)


def test_default_roundtrip(tmp_path):
    cfg = default_config()
    path = tmp_path / "run.yaml"
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == default_config()


def test_partial_sections_merge_with_defaults():
    cfg = config_from_dict({"sim": {"n_agents": 2}, "reward": {"method": "ttc"}})
    assert cfg.sim.n_agents == 2
    assert cfg.sim.dt == default_config().sim.dt
    assert cfg.reward.method == "ttc"
    assert cfg.map == default_config().map


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError, match="unknown section 'vehicles'"):
        config_from_dict({"vehicles": {}})
    with pytest.raises(ConfigError, match="unknown key 'sim.timestep'"):
        config_from_dict({"sim": {"timestep": 0.1}})
    with pytest.raises(ConfigError, match="expected a mapping"):
        config_from_dict({"sim": 3})
    with pytest.raises(ConfigError, match="expected a mapping"):
        config_from_dict([1, 2])


def test_type_coercion_rules():
    # int accepted where float expected
    cfg = config_from_dict({"sim": {"dt": 1}})
    assert cfg.sim.dt == 1.0 and isinstance(cfg.sim.dt, float)
    # bool is not a number, float is not an int, int is not a bool
    with pytest.raises(ConfigError, match="sim.dt"):
        config_from_dict({"sim": {"dt": True}})
    with pytest.raises(ConfigError, match="sim.n_agents"):
        config_from_dict({"sim": {"n_agents": 4.0}})
    with pytest.raises(ConfigError, match="eval.deterministic"):
        config_from_dict({"eval": {"deterministic": 1}})
    with pytest.raises(ConfigError, match="reward.method"):
        config_from_dict({"reward": {"method": 7}})


def test_tuple_fields_from_yaml_lists():
    cfg = config_from_dict({"eval": {"seeds": [3, 4]}})
    assert cfg.eval.seeds == (3, 4)
    with pytest.raises(ConfigError, match="eval.seeds"):
        config_from_dict({"eval": {"seeds": 3}})


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"reward": {"method": "banana"}})
    with pytest.raises(ConfigError):
        config_from_dict({"reward": {"reference_weights": [1.0, 2.0]}})
    with pytest.raises(ConfigError):
        build_map(config_from_dict({"map": {"lane_width": -1.0}}))
    with pytest.raises(ConfigError):
        build_env(config_from_dict({"sim": {"n_agents": 0}}))


def test_yaml_parse_error(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("sim: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid yaml"):
        load_config(path)


def test_cbf_dt_tied_to_sim_dt():
    cfg = config_from_dict({"sim": {"dt": 0.05}, "cbf": {"gamma": 0.8}})
    cc = cbf_config_of(cfg)
    assert cc.dt == 0.05 and cc.gamma == 0.8 and cc.remainder == 0.0


def test_build_env_method_and_overrides(imap):
    cfg = default_config()
    env = build_env(cfg, method="distance",
                    overrides={"vehicle_distance_threshold": 0.3}, imap=imap)
    assert env.reward_config.method == "distance"
    assert env.reward_config.vehicle_distance_threshold == 0.3
    # base config object is untouched
    assert cfg.reward.method == "cbf"
    with pytest.raises(ConfigError):
        build_env(cfg, overrides={"no_such_threshold": 1.0}, imap=imap)


def test_env_factory_picklable():
    fac = EnvFactory(default_config())
    fac2 = pickle.loads(pickle.dumps(fac))
    env = fac2("ttc", {"ttc_threshold": 3.0})
    assert env.reward_config.method == "ttc"
    assert env.reward_config.ttc_threshold == 3.0


def test_saved_file_is_plain_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    save_config(default_config(), path)
    data = yaml.safe_load(path.read_text())
    assert set(data) == {"map", "vehicle", "sim", "cbf", "reward", "ppo",
                         "eval"}
    assert isinstance(data["eval"]["seeds"], list)
    assert all(not isinstance(v, dict)
               for sec in data.values() for v in sec.values())
