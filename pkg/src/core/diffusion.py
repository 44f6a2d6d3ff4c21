"""Closed-form DDIM world: schedule, forward noising, deterministic sampling,
inversion, analytic noise predictors, and the generate/detect pipelines.

Step t runs from 0 (clean, ᾱ_0 = 1) to T (noise). The predictors stand in for
a trained ε_θ; all of them are per-element affine maps, so every pipeline
output can be checked against a scalar recurrence.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from . import detection_stats as ds
from .errors import DegenerateInputError, InvalidArgumentError
from .ring_codec import Message, WatermarkKey, build_mask, decode_bits, embed, encode, ring_means
from .tensors import LatentTensor, Rng, fft2, ifft2, sample_gaussian


@dataclass(frozen=True, eq=False)
class AlphaSchedule:
    steps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.array(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.steps + 1,):
            raise InvalidArgumentError(f"alpha_bar needs {self.steps + 1} entries, got {ab.shape}")
        if ab[0] != 1.0 or not np.all(np.diff(ab) < 0) or ab[-1] <= 0:
            raise InvalidArgumentError("alpha_bar must start at 1 and decrease strictly inside (0, 1]")
        ab.flags.writeable = False
        object.__setattr__(self, "alpha_bar", ab)

    def sqrt_ab(self, t: int) -> float:
        return math.sqrt(self.alpha_bar[t])

    def sqrt_one_minus_ab(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar[t])


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> AlphaSchedule:
    """Linear β from beta_start to beta_end; ᾱ_t = Π_{s≤t}(1 - β_s)."""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidArgumentError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, steps)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return AlphaSchedule(steps=steps, alpha_bar=alpha_bar)


class EpsilonPredictor(ABC):
    variant: str = ""

    @abstractmethod
    def predict(self, x: np.ndarray, t: int, sched: AlphaSchedule) -> np.ndarray:
        """ε_θ(x, t) for 1 <= t <= T."""

    def __call__(self, x: np.ndarray, t: int, sched: AlphaSchedule) -> np.ndarray:
        # t = 0 has no noise level of its own; evaluate with step 1's coefficients
        return self.predict(x, max(t, 1), sched)

    def to_json(self) -> dict:
        return {"kind": self.variant}


class ZeroPredictor(EpsilonPredictor):
    variant = "zero"

    def predict(self, x, t, sched):
        return np.zeros_like(x)


class LinearPredictor(EpsilonPredictor):
    """ε(x_t, t) = c_t · x_t with one coefficient per step t = 1..T."""

    variant = "linear"

    def __init__(self, coefficients):
        coeffs = np.atleast_1d(np.asarray(coefficients, dtype=np.float64))
        if not np.all(np.isfinite(coeffs)):
            raise InvalidArgumentError("linear predictor coefficients must be finite")
        self.coefficients = coeffs

    def coefficient(self, t: int, sched: AlphaSchedule) -> float:
        if self.coefficients.size == 1:
            return float(self.coefficients[0])
        if self.coefficients.size != sched.steps:
            raise InvalidArgumentError(
                f"linear predictor has {self.coefficients.size} coefficients for a {sched.steps}-step schedule"
            )
        return float(self.coefficients[t - 1])

    def predict(self, x, t, sched):
        return self.coefficient(t, sched) * x

    def to_json(self):
        return {"kind": self.variant, "coefficients": self.coefficients.tolist()}


class GaussianPriorPredictor(EpsilonPredictor):
    """Posterior-mean denoiser for the prior x_0 ~ N(μ_0, s_0² I).

    E[x_0 | x_t] = μ_0 + √ᾱ s_0² (x_t - √ᾱ μ_0) / (ᾱ s_0² + 1 - ᾱ)
    ε*(x_t, t)   = (x_t - √ᾱ E[x_0 | x_t]) / √(1 - ᾱ)
    """

    variant = "gaussian_prior"

    def __init__(self, mean=0.0, variance: float = 1.0):
        if not variance > 0:
            raise InvalidArgumentError(f"prior variance must be positive, got {variance}")
        self.mean = np.asarray(mean, dtype=np.float64)
        if not np.all(np.isfinite(self.mean)):
            raise InvalidArgumentError("prior mean must be finite")
        self.variance = float(variance)

    def posterior_mean(self, x, t, sched):
        ab = sched.alpha_bar[t]
        gain = math.sqrt(ab) * self.variance / (ab * self.variance + 1.0 - ab)
        return self.mean + gain * (x - math.sqrt(ab) * self.mean)

    def predict(self, x, t, sched):
        return (x - sched.sqrt_ab(t) * self.posterior_mean(x, t, sched)) / sched.sqrt_one_minus_ab(t)

    def to_json(self):
        mean = float(self.mean) if self.mean.ndim == 0 else self.mean.tolist()
        return {"kind": self.variant, "mean": mean, "variance": self.variance}


def make_predictor(spec: dict) -> EpsilonPredictor:
    """Build a predictor from its ``{"kind": ...}`` description."""
    kind = spec.get("kind")
    params = {k: v for k, v in spec.items() if k != "kind"}
    allowed = {"zero": set(), "linear": {"coefficients"}, "gaussian_prior": {"mean", "variance"}}
    if kind not in allowed:
        raise InvalidArgumentError(f"unknown predictor kind {kind!r}; expected one of {sorted(allowed)}")
    unknown = set(params) - allowed[kind]
    if unknown:
        raise InvalidArgumentError(f"unknown {kind} predictor fields: {sorted(unknown)}")
    if kind == "zero":
        return ZeroPredictor()
    if kind == "linear":
        return LinearPredictor(params.get("coefficients", 0.0))
    return GaussianPriorPredictor(mean=params.get("mean", 0.0), variance=params.get("variance", 1.0))


def _check_step(t: int, sched: AlphaSchedule, lowest: int = 0) -> None:
    if not lowest <= t <= sched.steps:
        raise InvalidArgumentError(f"step {t} outside [{lowest}, {sched.steps}]")


def forward_noise(x0: LatentTensor, eps: LatentTensor, t: int, sched: AlphaSchedule) -> LatentTensor:
    """x_t = √ᾱ_t x_0 + √(1 - ᾱ_t) ε."""
    if x0.shape != eps.shape:
        raise InvalidArgumentError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    _check_step(t, sched)
    return LatentTensor(sched.sqrt_ab(t) * x0.data + sched.sqrt_one_minus_ab(t) * eps.data)


def _denoise(x: np.ndarray, eps: np.ndarray, t: int, sched: AlphaSchedule) -> np.ndarray:
    return (x - sched.sqrt_one_minus_ab(t) * eps) / sched.sqrt_ab(t)


def ddim_denoise_estimate(xt: LatentTensor, t: int, pred: EpsilonPredictor, sched: AlphaSchedule) -> LatentTensor:
    """x_0'(t) = (x_t - √(1 - ᾱ_t) ε_θ(x_t, t)) / √ᾱ_t."""
    _check_step(t, sched, lowest=1)
    return LatentTensor(_denoise(xt.data, pred(xt.data, t, sched), t, sched))


def ddim_sample(xT: LatentTensor, pred: EpsilonPredictor, sched: AlphaSchedule,
                start_step: int | None = None) -> LatentTensor:
    """Deterministic DDIM from start_step (default T) down to 0."""
    start = sched.steps if start_step is None else start_step
    _check_step(start, sched)
    x = xT.data
    for t in range(start, 0, -1):
        eps = pred(x, t, sched)
        x0 = _denoise(x, eps, t, sched)
        x = sched.sqrt_ab(t - 1) * x0 + sched.sqrt_one_minus_ab(t - 1) * eps
    return LatentTensor(x)


def ddim_invert(x0: LatentTensor, pred: EpsilonPredictor, sched: AlphaSchedule) -> LatentTensor:
    """DDIM inversion: x_{t+1} = √ᾱ_{t+1} x_0'(t) + √(1 - ᾱ_{t+1}) ε_θ(x_t, t)."""
    x = x0.data
    for t in range(0, sched.steps):
        eps = pred(x, t, sched)
        x0_est = _denoise(x, eps, t, sched)
        x = sched.sqrt_ab(t + 1) * x0_est + sched.sqrt_one_minus_ab(t + 1) * eps
    return LatentTensor(x)


@dataclass(frozen=True, eq=False)
class Generation:
    image: LatentTensor
    xT_wm: LatentTensor
    xT: LatentTensor


@dataclass(frozen=True, eq=False)
class GenerationPair:
    watermarked: Generation
    plain: LatentTensor


def watermark_noise(xT: LatentTensor, key: WatermarkKey, msg: Message) -> LatentTensor:
    """Write the message pattern into the spectrum of ``xT``."""
    return ifft2(embed(fft2(xT), encode(msg, key)))


def generate_watermarked(rng: Rng, key: WatermarkKey, msg: Message, pred: EpsilonPredictor,
                         sched: AlphaSchedule, channels: int = 1) -> Generation:
    """Sample x_T, write the message rings into its spectrum, run DDIM."""
    xT = sample_gaussian(rng, (channels, key.height, key.width))
    xT_wm = watermark_noise(xT, key, msg)
    return Generation(image=ddim_sample(xT_wm, pred, sched), xT_wm=xT_wm, xT=xT)


def generate_plain(rng: Rng, shape: tuple[int, int, int], pred: EpsilonPredictor, sched: AlphaSchedule) -> Generation:
    """Unwatermarked generation; the initial noise doubles as ``xT_wm``."""
    xT = sample_gaussian(rng, shape)
    return Generation(image=ddim_sample(xT, pred, sched), xT_wm=xT, xT=xT)


def generate_pair(rng: Rng, key: WatermarkKey, msg: Message, pred: EpsilonPredictor,
                  sched: AlphaSchedule, channels: int = 1) -> GenerationPair:
    """Watermarked and unwatermarked generations from the same initial noise."""
    gen = generate_watermarked(rng, key, msg, pred, sched, channels)
    return GenerationPair(watermarked=gen, plain=ddim_sample(gen.xT, pred, sched))


@dataclass(frozen=True)
class DetectionReport:
    p_value: float
    present: bool
    bits: Message
    distance: float
    ring_means: tuple[float, ...]
    statistic: ds.DetectionStatistic | None
    reference: str = "expected"
    degenerate: bool = False
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "p_value": self.p_value,
            "present": self.present,
            "bits": self.bits.to_string(),
            "distance": self.distance,
            "ring_means": list(self.ring_means),
            "statistic": self.statistic.to_json() if self.statistic else None,
            "reference": self.reference,
            "degenerate": self.degenerate,
            "notes": list(self.notes),
        }


def recover_spectrum(image: LatentTensor, pred: EpsilonPredictor, sched: AlphaSchedule):
    """Invert an image back to x_T and return its centered spectrum."""
    return fft2(ddim_invert(image, pred, sched))


def detect_message(image: LatentTensor, key: WatermarkKey, pred: EpsilonPredictor, sched: AlphaSchedule,
                   p0: float = ds.DEFAULT_P0, expected: Message | None = None) -> DetectionReport:
    """Invert, transform, decode the rings and test for presence.

    With ``expected`` the p-value is taken against that message's pattern;
    otherwise against the pattern of the decoded bits (blind mode).
    """
    y = recover_spectrum(image, pred, sched)
    return report_from_spectrum(y, key, p0=p0, expected=expected)


def report_from_spectrum(y, key: WatermarkKey, p0: float = ds.DEFAULT_P0,
                         expected: Message | None = None) -> DetectionReport:
    bits = decode_bits(y, key)
    pattern = encode(expected if expected is not None else bits, key)
    mask = build_mask(key)
    reference = "expected" if expected is not None else "decoded"
    distance = ds.detection_distance(y, pattern, mask)
    means = ring_means(y, key)
    try:
        stat = ds.p_value(y, pattern, mask)
    except DegenerateInputError as e:
        return DetectionReport(p_value=1.0, present=False, bits=bits, distance=distance, ring_means=means,
                               statistic=None, reference=reference, degenerate=True, notes=(str(e),))
    return DetectionReport(p_value=stat.p_value, present=ds.is_present(stat, p0), bits=bits, distance=distance,
                           ring_means=means, statistic=stat, reference=reference)
