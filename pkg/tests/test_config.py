from pathlib import Path

import pytest
from pydantic import ValidationError

from wcsk.config import ConfigError, RunConfig, load_config
from wcsk.weights import InvalidWeightError

CONFIG_DIR = Path(__file__).parent.parent / "configs"


def _write(tmp_path, text: str) -> Path:
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


@pytest.mark.parametrize("name", ["verify_default", "solve_roster", "audit_roster"])
def test_committed_configs_load(name):
    config = load_config(CONFIG_DIR / f"{name}.toml")
    assert config.run.command == name.split("_")[0]


def test_defaults():
    config = RunConfig.model_validate({"run": {"command": "solve"}})
    assert config.seed == 42
    assert config.solver.N == 129
    assert config.solver.newton_kwargs()["count"] == 129
    assert config.chart.families == ["sphere"]
    assert [p.name for p in config.sphere_pairs()] == ["round", "exponential", "gaussian", "affine", "inverse_cube"]


def test_seed_is_mandatory_for_verify(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        load_config(_write(tmp_path, '[run]\ncommand = "verify"\n'))


def test_unknown_fields_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, '[run]\ncommand = "solve"\ncolour = "blue"\n'))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, '[run]\ncommand = "solve"\n[extras]\nx = 1\n'))


@pytest.mark.parametrize("section", [
    "[solver]\ntolerance = 0.0",
    "[solver]\ntolerance = 1e-6\nstall_tolerance = 1e-8",
    "[solver]\ndamping = 1.5",
    "[plan]\namplitudes = [-0.1]",
    "[plan]\nidentities = [\"no_such_check\"]",
    "[chart]\nfamilies = [\"torus\"]",
])
def test_invalid_values_rejected(tmp_path, section):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, f'[run]\ncommand = "solve"\n{section}\n'))


def test_toml_syntax_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[run\ncommand = 1\n"))
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")


def test_weight_syntax_checked_at_load(tmp_path):
    text = '[run]\ncommand = "solve"\n[[weights]]\nname = "bad"\nv = "(add 1"\nw = "0"\n'
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))
    with pytest.raises(ValidationError, match="Unknown operator"):
        RunConfig.model_validate({"run": {"command": "solve"}, "weights": [{"name": "bad", "v": "(foo)", "w": "0"}]})


def test_inline_weights(tmp_path):
    text = (
        '[run]\ncommand = "solve"\n'
        '[[weights]]\nname = "linear_soliton"\nv = "(add 2 x0)"\nw = "soliton"\nlog_concave = true\n'
    )
    config = load_config(_write(tmp_path, text))
    (pair,) = config.sphere_pairs()
    assert pair.name == "linear_soliton"
    assert pair.bounds.eta > 0
    assert pair.w(0.0) == pytest.approx(2.0 * 2.0 * (1.0 + 0.0))


def test_nonpositive_weight_fails_certification():
    config = RunConfig.model_validate(
        {"run": {"command": "verify", "seed": 1}, "weights": [{"name": "linear", "v": "x0", "w": "0"}]}
    )
    with pytest.raises(InvalidWeightError, match="nonpositive weight"):
        config.weight_pairs()


def test_sphere_weights_must_have_rank_one():
    config = RunConfig.model_validate(
        {"run": {"command": "solve"}, "weights": [{"name": "wide", "v": "1", "w": "0", "rank": 2}]}
    )
    with pytest.raises(ConfigError, match="rank 1"):
        config.sphere_pairs()


def test_sample_plans_follow_families():
    config = RunConfig.model_validate({
        "run": {"command": "verify", "seed": 9},
        "chart": {"families": ["sphere", "product"]},
        "plan": {"potentials": 2, "points": 5},
    })
    plans = config.sample_plans(config.weight_pairs())
    assert [p.chart for p in plans] == ["sphere", "product"]
    assert all(p.seed == 9 and p.points == 5 for p in plans)
