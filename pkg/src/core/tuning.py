"""Message-scaler selection.

For each candidate S in ascending order: generate one watermarked/plain pair
from shared noise, measure the detection resolution and test the g-criterion;
when it passes, measure the mean distortion over ``trials`` further pairs. The
smallest S passing both the criterion and the quality budget is selected.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import detection_stats as ds
from .diffusion import AlphaSchedule, EpsilonPredictor, generate_pair, recover_spectrum
from .errors import CriterionUndefinedError, InvalidArgumentError
from .metrics import distortion_proxy, psnr
from .ring_codec import Message, WatermarkKey, build_mask, encode
from .tensors import Rng


@dataclass(frozen=True)
class ScalerSearchConfig:
    s_min: float = 60.0
    s_max: float = 160.0
    s_step: float = 10.0
    quality_budget: float = math.inf
    consts: ds.GCriterionConstants = field(default_factory=ds.GCriterionConstants)
    trials: int = 4

    def __post_init__(self):
        if not self.s_min < self.s_max:
            raise InvalidArgumentError(f"need s_min < s_max, got {self.s_min} and {self.s_max}")
        if not self.s_step > 0:
            raise InvalidArgumentError(f"s_step must be positive, got {self.s_step}")
        if self.s_min <= 0:
            raise InvalidArgumentError(f"s_min must be positive, got {self.s_min}")
        if self.trials < 1:
            raise InvalidArgumentError(f"trials must be >= 1, got {self.trials}")
        if math.isnan(self.quality_budget) or self.quality_budget < 0:
            raise InvalidArgumentError(f"quality_budget must be >= 0, got {self.quality_budget}")

    def candidates(self) -> list[float]:
        count = int(math.floor((self.s_max - self.s_min) / self.s_step + 1e-9)) + 1
        return [float(v) for v in np.round(self.s_min + self.s_step * np.arange(count), 10)]


@dataclass(frozen=True)
class ScalerTrial:
    scaler: float
    detection_resolution: float
    denominator: float
    ratio: float | None
    criterion_passed: bool
    distortion: float | None = None
    psnr: float | None = None
    qualifies: bool = False
    note: str = ""

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ScalerSearchResult:
    scaler: float | None
    trace: tuple[ScalerTrial, ...]

    @property
    def found(self) -> bool:
        return self.scaler is not None

    def to_json(self) -> dict:
        return {"scaler": self.scaler, "found": self.found, "trace": [t.to_json() for t in self.trace]}


def _pair_resolution(rng: Rng, key: WatermarkKey, pred, sched, channels: int) -> float:
    """Detection resolution of one watermarked/plain pair."""
    msg = Message.random(rng.child(0), key.radius)
    pair = generate_pair(rng.child(1), key, msg, pred, sched, channels)
    pattern = encode(msg, key)
    y_wm = recover_spectrum(pair.watermarked.image, pred, sched)
    y_plain = recover_spectrum(pair.plain, pred, sched)
    return ds.detection_resolution(y_plain, y_wm, pattern, build_mask(key))


def _distortion(rng: Rng, key: WatermarkKey, pred, sched, channels: int, trials: int) -> tuple[float, float]:
    rms, db = [], []
    for j in range(trials):
        trial_rng = rng.child(1 + j)
        msg = Message.random(trial_rng.child(0), key.radius)
        pair = generate_pair(trial_rng.child(1), key, msg, pred, sched, channels)
        rms.append(distortion_proxy(pair.watermarked.image, pair.plain))
        db.append(psnr(pair.watermarked.image, pair.plain))
    return float(np.mean(rms)), float(np.mean(db))


def evaluate_scaler(scaler: float, cfg: ScalerSearchConfig, key_template: WatermarkKey,
                    pred: EpsilonPredictor, sched: AlphaSchedule, rng: Rng, channels: int = 1) -> ScalerTrial:
    """g-criterion at one scaler; distortion is only measured when it passes."""
    key =dataclasses.replace(key_template, scaler=scaler)
    r_det = _pair_resolution(rng.child(0), key, pred, sched, channels)
    try:
        crit = ds.g_criterion(r_det, scaler, cfg.consts)
    except CriterionUndefinedError as e:
        denominator = cfg.consts.k * scaler * scaler + cfg.consts.b * scaler
        return ScalerTrial(scaler=scaler, detection_resolution=r_det, denominator=denominator,
                           ratio=None, criterion_passed=False, note=str(e))
    if not crit.passed:
        return ScalerTrial(scaler=scaler, detection_resolution=r_det, denominator=crit.denominator,
                           ratio=crit.ratio, criterion_passed=False)
    distortion, mean_psnr = _distortion(rng, key, pred, sched, channels, cfg.trials)
    return ScalerTrial(scaler=scaler, detection_resolution=r_det, denominator=crit.denominator,
                       ratio=crit.ratio, criterion_passed=True, distortion=distortion, psnr=mean_psnr,
                       qualifies=distortion <= cfg.quality_budget)


def select_scaler(cfg: ScalerSearchConfig, key_template: WatermarkKey, pred: EpsilonPredictor,
                  sched: AlphaSchedule, rng: Rng, channels: int = 1,
                  max_workers: int | None = None) -> ScalerSearchResult:
    """Smallest qualifying S plus the full per-S trace; ``scaler`` is None when none qualifies.

    Every candidate draws from the same streams, so the result does not depend
    on ``max_workers``.
    """
    candidates = cfg.candidates()

    def run(scaler: float) -> ScalerTrial:
        return evaluate_scaler(scaler, cfg, key_template, pred, sched, rng, channels)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            trace = tuple(pool.map(run, candidates))
    else:
        trace = tuple(run(s) for s in candidates)
    chosen = next((t.scaler for t in trace if t.qualifies), None)
    return ScalerSearchResult(scaler=chosen, trace=trace)
