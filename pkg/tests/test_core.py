import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flexsac.core import (ConfigError, HyperParams, NormalizationSpec, RunConfig, apply_overrides,
                          config_from_dict, config_to_dict, denormalize_action, load_config,
                          normalize, normalize_setpoint, save_config, seeded_rng)


@pytest.mark.parametrize("a, sp", [(0.0, 21.0), (1.0, 28.0), (0.5, 24.5)])
def test_denormalize_endpoints(a, sp):
    assert denormalize_action(a) == sp


def test_denormalize_clips():
    assert denormalize_action(-0.3) == 21.0
    assert denormalize_action(1.7) == 28.0


@given(st.floats(21.0, 28.0))
def test_setpoint_roundtrip(sp):
    assert denormalize_action(normalize_setpoint(sp)) == pytest.approx(sp, abs=1e-12)


def test_normalize_clamps_and_scales():
    spec = NormalizationSpec(10.0, 40.0)
    assert normalize(25.0, spec) == 0.5
    assert normalize(-5.0, spec) == 0.0
    assert normalize(99.0, spec) == 1.0
    np.testing.assert_array_equal(normalize(np.array([10.0, 40.0]), spec), [0.0, 1.0])


def test_normalization_spec_rejects_empty_range():
    with pytest.raises(ConfigError):
        NormalizationSpec(1.0, 1.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_normalize_monotone(x, y):
    spec = NormalizationSpec(-30.0, 50.0)
    lo, hi = sorted((x, y))
    assert normalize(lo, spec) <= normalize(hi, spec)


def test_seeded_rng_streams():
    a = seeded_rng(42).random(100)
    assert np.array_equal(a, seeded_rng(42).random(100))
    assert not np.array_equal(seeded_rng(1).random(100), seeded_rng(2).random(100))
    assert not np.array_equal(seeded_rng(7, "buffer").random(10), seeded_rng(7, "policy").random(10))


def test_config_roundtrip(tmp_path):
    cfg = RunConfig()
    save_config(cfg, tmp_path / "c.toml")
    back = load_config(tmp_path / "c.toml")
    assert back == cfg
    assert back.hyperparams == HyperParams()


def test_config_schema_version_written(tmp_path):
    save_config(RunConfig(), tmp_path / "c.toml")
    assert "schema_version = 1" in (tmp_path / "c.toml").read_text()


def test_unknown_key_rejected():
    data = config_to_dict(RunConfig())
    data["sac"]["gamm"] = 0.9
    with pytest.raises(ConfigError, match="gamm"):
        config_from_dict(data)


def test_unknown_section_rejected():
    data = config_to_dict(RunConfig())
    data["extra"] = {"x": 1}
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_type_mismatch_rejected():
    data = config_to_dict(RunConfig())
    data["run"]["episodes"] = "fifty"
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_int_accepted_for_float():
    cfg = apply_overrides(RunConfig(), {"sac.lambda_comfort": 500})
    assert cfg.hyperparams.lambda_comfort == 500.0
    assert isinstance(cfg.hyperparams.lambda_comfort, float)


def test_overrides_and_validation():
    cfg = apply_overrides(RunConfig(), {"sac.gamma": 0.9, "episodes": 3})
    assert cfg.hyperparams.gamma == 0.9 and cfg.episodes == 3
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"sac.gamma": 1.5})
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"nope.x": 1})


def test_malformed_file(tmp_path):
    (tmp_path / "bad.toml").write_text("[sac\ngamma = ")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_hyperparam_defaults():
    hp = HyperParams()
    assert (hp.gamma, hp.alpha, hp.lambda_comfort, hp.beta) == (0.99, 0.05, 100.0, 1e-5)
    assert (hp.learning_rate, hp.tau, hp.minibatch_size) == (1e-3, 3e-3, 2048)
    assert hp.buffer_capacity == 2_000_000 and hp.update_interval_sim_steps == 96
    assert dataclasses.replace(hp) == hp
