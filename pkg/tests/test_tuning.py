from __future__ import annotations

import math

import pytest

from src.core.errors import InvalidArgumentError
from src.core.ring_codec import WatermarkKey
from src.core.tensors import Rng
from src.core.tuning import ScalerSearchConfig, evaluate_scaler, select_scaler

KEY = WatermarkKey(radius=6, scaler=1.0, height=32, width=32)


def test_candidates():
    assert ScalerSearchConfig().candidates() == [60.0 + 10.0 * i for i in range(11)]
    assert ScalerSearchConfig(s_min=1.0, s_max=1.3, s_step=0.1).candidates() == [1.0, 1.1, 1.2, 1.3]
    with pytest.raises(InvalidArgumentError):
        ScalerSearchConfig(s_min=100.0, s_max=50.0)
    with pytest.raises(InvalidArgumentError):
        ScalerSearchConfig(quality_budget=-1.0)


def test_unbounded_budget_picks_the_smallest_passing_scaler(short_schedule, zero_predictor):
    cfg = ScalerSearchConfig(trials=2)
    result = select_scaler(cfg, KEY, zero_predictor, short_schedule, Rng(1))
    assert result.found
    assert result.scaler == 60.0
    assert len(result.trace) == 11
    first = result.trace[0]
    assert first.criterion_passed and first.qualifies
    assert first.distortion > 0


def test_zero_budget_finds_nothing(short_schedule, zero_predictor):
    cfg = ScalerSearchConfig(quality_budget=0.0, trials=1)
    result = select_scaler(cfg, KEY, zero_predictor, short_schedule, Rng(1))
    assert not result.found
    assert result.scaler is None
    assert len(result.trace) == 11
    assert not any(t.qualifies for t in result.trace)
    assert result.to_json()["found"] is False


def test_parallel_search_matches_sequential(short_schedule, prior_predictor):
    cfg = ScalerSearchConfig(s_min=20.0, s_max=100.0, s_step=20.0, trials=2)
    sequential = select_scaler(cfg, KEY, prior_predictor, short_schedule, Rng(5))
    parallel = select_scaler(cfg, KEY, prior_predictor, short_schedule, Rng(5), max_workers=4)
    assert parallel.to_json() == sequential.to_json()


def test_undefined_criterion_is_recorded(short_schedule, zero_predictor):
    cfg = ScalerSearchConfig(s_min=250.0, s_max=350.0, s_step=50.0, trials=1)
    result = select_scaler(cfg, KEY, zero_predictor, short_schedule, Rng(2))
    assert [t.scaler for t in result.trace] == [250.0, 300.0, 350.0]
    assert result.trace[0].criterion_passed
    for trial in result.trace[1:]:
        assert not trial.criterion_passed
        assert trial.ratio is None
        assert trial.denominator < 0
        assert "undefined" in trial.note
    assert result.scaler == 250.0


def test_resolution_and_distortion_increase_with_scaler(short_schedule, prior_predictor):
    cfg = ScalerSearchConfig(s_min=20.0, s_max=140.0, s_step=40.0, trials=2)
    trials = [evaluate_scaler(s, cfg, KEY, prior_predictor, short_schedule, Rng(3)) for s in cfg.candidates()]
    assert all(t.criterion_passed for t in trials)
    resolutions = [t.detection_resolution for t in trials]
    distortions = [t.distortion for t in trials]
    assert all(a < b for a, b in zip(resolutions, resolutions[1:]))
    assert all(a < b for a, b in zip(distortions, distortions[1:]))
    assert all(math.isfinite(t.psnr) for t in trials)
