import json

import pytest

from rsa2c.config import ConfigError, RunConfig, default_config, dump_config, load_config, parse_assignment


def test_defaults():
    cfg = RunConfig().validate()
    assert cfg.epochs == 2000 and cfg.gamma == 0.99 and cfg.env == "pendulum"
    assert cfg.actor.exponent == 0.75 and cfg.critic.exponent == 0.5
    assert cfg.eval_episodes == 5 and cfg.shap.mode == "kme"
    assert cfg.lengthscale**2 == pytest.approx(0.8)


@pytest.mark.parametrize("key,value,field", [
    ("gamma", 1.5, "gamma"),
    ("gamma", 0.0, "gamma"),
    ("epochs", -1, "epochs"),
    ("noise_var", -0.1, "noise_var"),
    ("shap.mode", "foo", "shap.mode"),
    ("critic.exponent", 0.8, "critic.exponent"),
    ("kernel.eps0", 0.0, "kernel.eps0"),
])
def test_validation_names_the_key(key, value, field):
    with pytest.raises(ConfigError, match=f"^{field}:"):
        RunConfig().set(key, value).validate()


def test_two_timescale_can_be_disabled():
    cfg = RunConfig().set("two_timescale", "false").set("critic.exponent", 0.9)
    assert cfg.validate().critic.exponent == 0.9


def test_unknown_keys_rejected():
    for key in ("nope", "actor.nope", "actor", "nope.base"):
        with pytest.raises(ConfigError, match="unknown key"):
            RunConfig().set(key, 1)


def test_coercion():
    cfg = RunConfig().set("epochs", "30").set("kernel.residual_threshold", "1e-3").set("horizon", "none")
    assert cfg.epochs == 30 and cfg.kernel.residual_threshold == 1e-3 and cfg.horizon is None
    assert RunConfig().set("epochs", "1e3").epochs == 1000
    with pytest.raises(ConfigError):
        RunConfig().set("epochs", "abc")
    with pytest.raises(ConfigError):
        RunConfig().set("epochs", None)


def test_overrides_do_not_mutate():
    base = RunConfig()
    new = base.with_overrides({"shap.mode": "cme", "seed": 4})
    assert base.shap.mode == "kme" and new.shap.mode == "cme" and new.seed == 4


def test_dict_round_trip():
    cfg = default_config("lqr", shap__mode="off", noise_var=0.01)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_flat_file_round_trip(tmp_path):
    cfg = default_config(seed=3, kernel__rbf_variance=0.5)
    p = tmp_path / "c.txt"
    p.write_text("# comment\n" + dump_config(cfg))
    assert load_config(p) == cfg


def test_json_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"env": "lqr", "actor": {"base": 0.5}}))
    cfg = load_config(p)
    assert cfg.env == "lqr" and cfg.actor.base == 0.5
    p.write_text("{bad")
    with pytest.raises(ConfigError):
        load_config(p)


def test_parse_assignment():
    assert parse_assignment("a.b = 3=4") == ("a.b", "3=4")
    with pytest.raises(ConfigError):
        parse_assignment("novalue")
