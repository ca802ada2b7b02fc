import pytest

from daqtrack.config import RunConfig, parse_set_overrides
from daqtrack.errors import ConfigError


def test_defaults_build_all_objects():
    cfg = RunConfig()
    mc = cfg.model_config()
    assert (mc.dim, mc.heads, mc.layers) == (64, 4, 3)
    ns = cfg.noise_spec()
    assert ns.n_queries == 20
    ec = cfg.eds_config()
    assert ec is not None and ec.es_threshold == 0.1
    tc = cfg.train_config()
    assert tc.lr == 1e-4 and tc.weight_decay == 5e-2 and tc.clip_len == 5
    lc = cfg.loss_config()
    assert (lc.w_cls, lc.w_dice, lc.w_bce) == (2.0, 5.0, 5.0)


def test_ini_file_round(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\ndim = 16\nheads = 2\n\n[eds]\nes_threshold = 0.25\n")
    cfg = RunConfig.load(path=path)
    assert cfg.get_int("model.dim") == 16
    assert cfg.eds_config().es_threshold == 0.25


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\ndimension = 16\n")
    with pytest.raises(ConfigError, match="dimension"):
        RunConfig.load(path=path)


def test_env_override():
    cfg = RunConfig()
    cfg.apply_env({"DAQTRACK_EDS_ES_THRESHOLD": "0.42",
                   "DAQTRACK_MODEL_DIM": "32",
                   "UNRELATED": "x"})
    assert cfg.get_float("eds.es_threshold") == 0.42
    assert cfg.get_int("model.dim") == 32


def test_set_overrides_win_over_env_and_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nsteps = 100\n")
    cfg = RunConfig.load(path=path, overrides={"train.steps": "7"},
                         env={"DAQTRACK_TRAIN_STEPS": "50"})
    assert cfg.get_int("train.steps") == 7


def test_parse_set_overrides():
    assert parse_set_overrides(["a.b=1", "c.d = x "]) == {"a.b": "1", "c.d": "x"}
    with pytest.raises(ConfigError):
        parse_set_overrides(["no-equals"])


def test_bad_values_report_key():
    cfg = RunConfig()
    cfg.values["model.dim"] = "abc"
    with pytest.raises(ConfigError, match="model.dim"):
        cfg.get_int("model.dim")
    cfg.values["eds.enabled"] = "maybe"
    with pytest.raises(ConfigError, match="eds.enabled"):
        cfg.get_bool("eds.enabled")


def test_eds_disabled_returns_none():
    cfg = RunConfig()
    cfg.values["eds.enabled"] = "false"
    assert cfg.eds_config() is None
    assert cfg.train_config().eds_enabled is False


def test_scenario_presets():
    cfg = RunConfig()
    dense = cfg.scenario_spec("dense-ed")
    assert dense.emergence_rate == 0.8 and dense.disappearance_rate == 0.8
    assert dense.feature_dim == 64
    easy = cfg.scenario_spec("easy")
    assert easy.emergence_rate == 0.0
    with pytest.raises(ConfigError):
        cfg.scenario_spec("bogus")


def test_invalid_model_config_becomes_config_error():
    cfg = RunConfig()
    cfg.values["model.dim"] = "10"   # not divisible by 4 heads
    with pytest.raises(ConfigError):
        cfg.model_config()
