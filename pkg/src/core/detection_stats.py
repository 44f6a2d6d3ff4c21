"""Detection statistics: σ² estimate, the non-central chi-squared p-value,
detection distance, detection resolution and the g-criterion.

Small p means the watermark is present: z shrinks as the recovered spectrum
approaches the pattern and the CDF is monotone in z.

Degrees of freedom. Every masked bin of a real tensor's spectrum has its
conjugate twin at the reflection through the center, which is also masked.
The test therefore runs over one bin per conjugate pair, each contributing two
real components (real and imaginary part) with variance σ²/2. That gives
dof = |M| components, and z and λ equal Σ|·|²/σ² over the whole mask.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from decimal import Decimal

import numpy as np
from scipy import special, stats

from .errors import CriterionUndefinedError, DegenerateInputError, InvalidArgumentError, InvariantViolation
from .ring_codec import RingMask, WatermarkPattern
from .tensors import Spectrum

SIGMA_SQ_FLOOR = 1e-12
POISSON_TAIL = 1e-12
MAX_SERIES_TERMS = 100_000
DEFAULT_P0 = 0.01


@dataclass(frozen=True)
class DetectionStatistic:
    sigma_sq: float
    z: float
    lam: float
    dof: int
    p_value: float
    method: str = "series"

    def to_json(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


@dataclass(frozen=True)
class GCriterionConstants:
    k: float = -2.23e-3
    b: float = 0.653


@dataclass(frozen=True)
class GCriterionResult:
    ratio: float
    passed: bool
    denominator: float


def _masked(y: Spectrum, mask: RingMask) -> np.ndarray:
    if (y.height, y.width) != (mask.height, mask.width) or mask.channel >= y.channels:
        raise InvalidArgumentError("spectrum does not match the mask geometry")
    return y.data[mask.channel][mask.union]


def _pattern_on_mask(pattern: WatermarkPattern, mask: RingMask) -> np.ndarray:
    return pattern.dense()[mask.union]


def estimate_sigma_sq(y: Spectrum, mask: RingMask) -> float:
    """Mean squared modulus over the watermarked area."""
    if mask.count == 0:
        raise InvalidArgumentError("empty mask")
    values = _masked(y, mask)
    return float(np.mean(np.abs(values) ** 2))


def ncx2_cdf(dof: int, lam: float, z: float) -> float:
    """P(χ²_{dof,λ} ≤ z) as a Poisson(λ/2)-weighted sum of central CDFs.

    Terms are taken over the Poisson window that leaves less than 1e-12 of
    mass outside; each central CDF is the regularized lower incomplete gamma
    P(dof/2 + j, z/2).
    """
    if dof < 1:
        raise InvalidArgumentError(f"dof must be a positive integer, got {dof}")
    if lam < 0 or not np.isfinite(lam) or not np.isfinite(z):
        raise InvalidArgumentError(f"invalid parameters lambda={lam}, z={z}")
    if z <= 0:
        return 0.0
    mu = lam / 2.0
    if mu == 0:
        return float(special.gammainc(dof / 2.0, z / 2.0))
    poisson = stats.poisson(mu)
    lo = int(poisson.ppf(POISSON_TAIL / 2))
    hi = int(poisson.isf(POISSON_TAIL / 2))
    if hi - lo + 1 > MAX_SERIES_TERMS:
        raise InvariantViolation(
            f"non-central chi-squared series needs {hi - lo + 1} terms (cap {MAX_SERIES_TERMS})"
        )
    j = np.arange(lo, hi + 1)
    weights = poisson.pmf(j)
    central = special.gammainc(dof / 2.0 + j, z / 2.0)
    return float(np.clip(np.dot(weights, central), 0.0, 1.0))


def ncx2_cdf_fallback(dof: int, lam: float, z: float) -> float:
    """CDF for windows too wide for the series.

    Defers to scipy's non-central chi-squared, and to a normal approximation
    with mean dof + λ and variance 2(dof + 2λ) if that is not finite.
    """
    value = float(stats.ncx2.cdf(z, dof, lam))
    if not np.isfinite(value):
        value = float(stats.norm.cdf(z, loc=dof + lam, scale=np.sqrt(2.0 * (dof + 2.0 * lam))))
    return min(max(value, 0.0), 1.0)


def p_value(y: Spectrum, pattern: WatermarkPattern, mask: RingMask) -> DetectionStatistic:
    sigma_sq = estimate_sigma_sq(y, mask)
    if sigma_sq < SIGMA_SQ_FLOOR:
        raise DegenerateInputError(f"sigma^2 = {sigma_sq:.3g} is below {SIGMA_SQ_FLOOR:g}")
    rows, cols = mask.half
    plane = y.data[mask.channel]
    wm = pattern.dense()[rows, cols]
    obs = plane[rows, cols]
    component_var = sigma_sq / 2.0
    z = float(np.sum(np.abs(wm - obs) ** 2) / component_var)
    lam = float(np.sum(np.abs(wm) ** 2) / component_var)
    dof = 2 * len(rows)
    try:
        p, method = ncx2_cdf(dof, lam, z), "series"
    except InvariantViolation:
        # low-energy inputs push λ far past what the series window can hold
        p, method = ncx2_cdf_fallback(dof, lam, z), "scipy"
    return DetectionStatistic(sigma_sq=sigma_sq, z=z, lam=lam, dof=dof, p_value=p, method=method)


def is_present(stat: DetectionStatistic, p0: float = DEFAULT_P0) -> bool:
    """True when the statistic rejects "no watermark" at level ``p0``."""
    return stat.p_value < p0


def detection_distance(y: Spectrum, pattern: WatermarkPattern, mask: RingMask) -> float:
    """Mean modulus of y - WM over the watermarked area.

    Zero exactly when the recovered spectrum equals the pattern on every masked
    bin.
    """
    if mask.count == 0:
        raise InvalidArgumentError("empty mask")
    return float(np.mean(np.abs(_pattern_on_mask(pattern, mask) - _masked(y, mask))))


def detection_resolution(y_plain: Spectrum, y_wm: Spectrum, pattern: WatermarkPattern, mask: RingMask) -> float:
    """Distance of the plain spectrum minus distance of the watermarked one."""
    if y_plain.shape != y_wm.shape:
        raise InvalidArgumentError(f"spectra differ in shape: {y_plain.shape} vs {y_wm.shape}")
    return detection_distance(y_plain, pattern, mask) - detection_distance(y_wm, pattern, mask)


def g_criterion(r_det: float, scaler: float, consts: GCriterionConstants = GCriterionConstants()) -> GCriterionResult:
    """Compare R_det with the empirical bound k·S² + b·S.

    Args:
        r_det: measured detection resolution.
        scaler: the message scaler S the resolution was measured at.
        consts: fitted k and b.

    Returns:
        GCriterionResult with the ratio R_det / (k·S² + b·S) and the pass flag.

    Raises:
        CriterionUndefinedError: when the bound is not positive at S.
    """
    # k and b are decimal fits; evaluate kS^2 + bS in decimal so 43.0 at S=100 stays exact
    k, b, s = (Decimal(repr(float(v))) for v in (consts.k, consts.b, scaler))
    denominator = float(k * s * s + b * s)
    if denominator <= 0:
        raise CriterionUndefinedError(
            f"kS^2 + bS = {denominator:.6g} <= 0 for S={scaler:g}; the criterion is undefined"
        )
    ratio = r_det / denominator
    return GCriterionResult(ratio=ratio, passed=ratio >= 1.0, denominator=denominator)
