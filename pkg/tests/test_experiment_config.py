from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from src.core.errors import ConfigError
from src.core.experiment import ExperimentConfig, load_config, parse_config
from src.core.ring_codec import Message

EXAMPLE = Path(__file__).resolve().parents[1] / "config" / "experiment.example.json"


def _line(text: str, needle: str) -> int:
    return next(i for i, line in enumerate(text.splitlines(), start=1) if needle in line)


def test_empty_document_uses_defaults():
    cfg = parse_config("{}")
    assert cfg.shape == (4, 64, 64)
    assert cfg.key.radius == 10 and cfg.key.scaler == 100.0
    assert cfg.schedule.steps == 40
    assert cfg.predictor.variant == "gaussian_prior"
    assert len(cfg.attacks) == 9
    assert math.isinf(cfg.tuning.quality_budget)


def test_example_config_loads():
    cfg = load_config(EXAMPLE)
    assert [a.kind for a in cfg.attacks][:3] == ["none", "lowpass_recon", "diffusion_regen"]
    assert cfg.signature.prob(cfg.attacks[-1]) == 0.005
    assert cfg.tuning.candidates()[0] == 60.0
    assert parse_config(json.dumps(cfg.to_json())).to_json() == cfg.to_json()


def test_unknown_top_level_key_reports_its_line():
    text = '{\n  "seed": 1,\n  "colour": "blue"\n}\n'
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.line == 3
    assert "colour" in str(e.value)
    assert e.value.exit_code == 2


def test_unknown_nested_key_reports_its_line():
    text = '{\n  "key": {\n    "r": 6,\n    "radius": 6\n  }\n}\n'
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.line == 4


def test_json_syntax_error_reports_its_line():
    with pytest.raises(ConfigError) as e:
        parse_config('{\n  "seed": 1,\n  "p0": ,\n}\n')
    assert e.value.line == 3


def test_radius_too_large_is_rejected(write_config):
    path = write_config({"key": {"r": 16, "S": 50}})
    text = path.read_text(encoding="utf-8")
    with pytest.raises(ConfigError, match=r"r < min\(H//2, W//2\)") as e:
        load_config(path)
    assert e.value.line == _line(text, '"key"')


def test_invariant_errors_point_at_their_section(write_config):
    path = write_config({"p0": 1.5})
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert e.value.line == _line(path.read_text(encoding="utf-8"), '"p0"')

    path = write_config({"attacks": [{"kind": "diffusion_regen", "params": {"step": 9}}]})
    with pytest.raises(ConfigError, match="exceeds"):
        load_config(path)

    path = write_config({"messages": {"source": "fixed", "bits": "101"}})
    with pytest.raises(ConfigError, match="exactly r=6"):
        load_config(path)


def test_fixed_and_random_messages(write_config):
    fixed = load_config(write_config({"messages": {"source": "fixed", "bits": "101101"}}))
    assert fixed.message_for(0) == fixed.message_for(5) == Message.from_string("101101")
    cycled = load_config(write_config({"messages": {"source": "random", "count": 2}}))
    assert cycled.message_for(0) == cycled.message_for(2)
    assert cycled.message_for(1) == cycled.message_for(3)


def test_overrides(write_config, tmp_path):
    cfg = load_config(write_config())
    moved = cfg.with_overrides(seed=11, output_dir=tmp_path / "elsewhere")
    assert moved.seed == 11 and cfg.seed == 7
    assert moved.output_dir == tmp_path / "elsewhere"
    assert cfg.with_overrides() is cfg
    assert isinstance(moved, ExperimentConfig)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.json")


def test_key_capacity_picks_the_radius():
    assert parse_config('{"key": {"capacity": 1024, "S": 50}}').key.radius == 10
    assert parse_config('{"key": {"capacity": 1025, "S": 50}}').key.radius == 11
    text = '{\n  "key": {\n    "r": 6,\n    "capacity": 64\n  }\n}\n'
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.line == 4
    with pytest.raises(ConfigError) as e:
        parse_config('{\n  "key": {"capacity": 0}\n}\n')
    assert e.value.line == 2
