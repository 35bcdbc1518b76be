import pytest
import yaml

from cacc_rl.config import ExperimentConfig, build_config, dump_config, load_config, parse_override
from cacc_rl.errors import ConfigError


def test_defaults_build_runtime_objects():
    cfg = build_config()
    assert cfg.sim_config().n_followers == 3
    assert cfg.agent_config().d_msg == 8
    assert cfg.idm_params().T == 1.5
    assert set(cfg.scenarios) == {"constant", "sinusoid", "stop-and-go"}


def test_file_then_overrides_then_seed(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\nagent:\n  gamma: 0.9\nsim:\n  n_followers: 5\n")
    cfg = load_config(path, ["agent.gamma=0.95", "comm.d_msg=4"], seed=11)
    assert (cfg.agent.gamma, cfg.sim.n_followers, cfg.comm.d_msg, cfg.seed) == (0.95, 5, 4, 11)
    assert cfg.agent.tau == 0.005


def test_json_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"train": {"episodes": 4}}')
    assert load_config(path).train.episodes == 4


def test_partial_scenario_override_keeps_other_fields():
    cfg = build_config({"scenarios": {"sinusoid": {"amplitude": 1.0}}})
    s = cfg.scenarios["sinusoid"]
    assert (s.kind, s.v_c, s.amplitude, s.period) == ("sinusoid", 20.0, 1.0, 60.0)


def test_new_scenario_can_be_declared():
    cfg = build_config(overrides=["scenarios.slow.kind=constant", "scenarios.slow.v_c=5"])
    assert cfg.scenarios["slow"].v_c == 5.0


@pytest.mark.parametrize("override", ["agent.gama=0.9", "sim.n_followers=0", "comm.mode=carrier-pigeon",
                                      "agent.gamma=2", "train.algo=ppo", "scenarios.x.kind=replay",
                                      "reward.params.sigma=-1"])
def test_invalid_values_are_config_errors(override):
    with pytest.raises(ConfigError):
        build_config(overrides=[override])


def test_override_syntax_errors():
    with pytest.raises(ConfigError):
        parse_override("agent.gamma")
    with pytest.raises(ConfigError):
        parse_override("agent..gamma=1")
    with pytest.raises(ConfigError):
        build_config(overrides=["seed.x=1"])


def test_override_values_are_typed():
    assert parse_override("a.b=[1, 2]") == (["a", "b"], [1, 2])
    assert parse_override("a=true") == (["a"], True)


def test_unparseable_file(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("agent: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_dump_round_trips():
    cfg = build_config(overrides=["data.schema.local_y=Y"], seed=4)
    again = build_config(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert again.data.schema_map == {"local_y": "Y"}


def test_zero_episodes_allowed():
    assert build_config(overrides=["train.episodes=0"]).train.episodes == 0


def test_model_is_strict():
    with pytest.raises(Exception):
        ExperimentConfig(unknown=1)
