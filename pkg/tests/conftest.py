from __future__ import annotations

import json
from pathlib import Path

import pytest

from src.core.diffusion import GaussianPriorPredictor, ZeroPredictor, make_schedule
from src.core.ring_codec import WatermarkKey


@pytest.fixture(scope="session")
def short_schedule():
    return make_schedule(10)


@pytest.fixture(scope="session")
def full_schedule():
    return make_schedule(40)


@pytest.fixture(scope="session")
def zero_predictor():
    return ZeroPredictor()


@pytest.fixture(scope="session")
def prior_predictor():
    return GaussianPriorPredictor(mean=0.0, variance=0.8)


@pytest.fixture(scope="session")
def small_key():
    """32x32 spectrum, six rings."""
    return WatermarkKey(radius=6, scaler=100.0, height=32, width=32)


@pytest.fixture
def write_config(tmp_path: Path):
    """Write an experiment document and return its path."""
    def _write(overrides: dict | None = None, name: str = "experiment.json") -> Path:
        doc = {
            "seed": 7,
            "shape": {"channels": 2, "height": 32, "width": 32},
            "schedule": {"steps": 5},
            "predictor": {"kind": "zero"},
            "key": {"r": 6, "S": 50, "channel": 0},
            "messages": {"source": "random"},
            "attacks": [{"kind": "none"}, {"kind": "blur", "params": {"radius": 1}}],
            "p0": 0.01,
            "trials": 3,
            "output_dir": str(tmp_path / "out"),
            "tuning": {"s_min": 20, "s_max": 60, "s_step": 20, "trials": 1},
            "signature": {"bits": 48, "groups": 4},
        }
        doc.update(overrides or {})
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return path

    return _write
