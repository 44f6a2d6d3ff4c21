"""Image-space attack channel applied between generation and detection.

Every attack maps a C×H×W LatentTensor to one of the same shape. Kinds and
their single parameter:

    none                          identity
    rotate(degrees)               bilinear rotation about the center, zero fill
    jpeg(quality)                 baseline JPEG round trip on an 8-bit affine view
    crop_scale(keep)              central keep·H × keep·W window scaled back up
    blur(radius)                  Gaussian blur, std = radius / 2, cut at 3 std
    gaussian_noise(sigma)         N(0, (sigma · channel range)²) added per element
    brightness(factor)            m + factor · (x - m), m the channel mean
    diffusion_regen(step)         re-noise to ``step`` and sample back down
    lowpass_recon(keep)           keep the lowest ``keep`` share of frequencies
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .diffusion import AlphaSchedule, EpsilonPredictor, ddim_sample, forward_noise
from .errors import InvalidArgumentError
from .tensors import LatentTensor, Rng, Spectrum, fft2, ifft2, sample_gaussian

# kind -> (parameter name, default)
ATTACK_PARAMS: dict[str, tuple[str, float] | None] = {
    "none": None,
    "rotate": ("degrees", 75.0),
    "jpeg": ("quality", 25),
    "crop_scale": ("keep", 0.75),
    "blur": ("radius", 4.0),
    "gaussian_noise": ("sigma", 0.1),
    "brightness": ("factor", 6.0),
    "diffusion_regen": ("step", 6),
    "lowpass_recon": ("keep", 0.25),
}

BLUR_TRUNCATE = 3.0


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_PARAMS:
            raise InvalidArgumentError(f"unknown attack kind {self.kind!r}; expected one of {sorted(ATTACK_PARAMS)}")
        spec = ATTACK_PARAMS[self.kind]
        params = dict(self.params)
        allowed = {spec[0]} if spec else set()
        unknown = set(params) - allowed
        if unknown:
            raise InvalidArgumentError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        if spec:
            name, default = spec
            params.setdefault(name, default)
            params[name] = _check_param(self.kind, name, params[name])
        object.__setattr__(self, "params", params)

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    @property
    def value(self):
        """The attack's single parameter, or None for ``none``."""
        spec = ATTACK_PARAMS[self.kind]
        return self.params[spec[0]] if spec else None

    @property
    def label(self) -> str:
        """Human-readable label used as the ``attack`` column of reports."""
        spec = ATTACK_PARAMS[self.kind]
        if not spec:
            return self.kind
        return f"{self.kind}({spec[0]}={self.params[spec[0]]:g})"

    @property
    def slug(self) -> str:
        """File-system friendly label, e.g. ``jpeg-25``."""
        return self.kind if self.value is None else f"{self.kind}-{self.value:g}"

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> AttackSpec:
        unknown = set(obj) - {"kind", "params"}
        if unknown:
            raise InvalidArgumentError(f"unknown attack fields: {sorted(unknown)}")
        params = obj.get("params") or {}
        if not isinstance(params, dict):
            raise InvalidArgumentError("attack params must be an object")
        return cls(kind=obj.get("kind", "none"), params=params)


def _check_param(kind: str, name: str, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise InvalidArgumentError(f"{kind}.{name} must be a finite number, got {value!r}")
    if kind in ("jpeg", "diffusion_regen"):
        if int(value) != value:
            raise InvalidArgumentError(f"{kind}.{name} must be an integer, got {value}")
        value = int(value)
        if kind == "jpeg" and not 1 <= value <= 100:
            raise InvalidArgumentError(f"jpeg quality must be in [1, 100], got {value}")
        if kind == "diffusion_regen" and value < 0:
            raise InvalidArgumentError(f"diffusion_regen step must be >= 0, got {value}")
        return value
    value = float(value)
    if kind in ("crop_scale", "lowpass_recon") and not 0 < value <= 1:
        raise InvalidArgumentError(f"{kind}.{name} must be in (0, 1], got {value}")
    if kind in ("blur", "gaussian_noise", "brightness") and value < 0:
        raise InvalidArgumentError(f"{kind}.{name} must be non-negative, got {value}")
    return value


REFERENCE_ATTACKS: tuple[AttackSpec, ...] = (
    AttackSpec("none"),
    AttackSpec("lowpass_recon", {"keep": 0.25}),
    AttackSpec("diffusion_regen", {"step": 6}),
    AttackSpec("rotate", {"degrees": 75.0}),
    AttackSpec("brightness", {"factor": 6.0}),
    AttackSpec("gaussian_noise", {"sigma": 0.1}),
    AttackSpec("blur", {"radius": 4.0}),
    AttackSpec("crop_scale", {"keep": 0.75}),
    AttackSpec("jpeg", {"quality": 25}),
)


def _rotate(x: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate each plane about its center; uncovered corners become 0."""
    if degrees % 360.0 == 0:
        return x.copy()
    return ndimage.rotate(x, degrees, axes=(1, 2), reshape=False, order=1, mode="grid-constant", cval=0.0)


def _jpeg_plane(plane: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip one plane through an 8-bit grayscale JPEG.

    The plane is mapped linearly onto 0..255 before encoding and mapped back
    after decoding.
    """
    lo, hi = float(plane.min()), float(plane.max())
    if hi == lo:
        return plane.copy()
    scale = (hi - lo) / 255.0
    u8 = np.clip(np.rint((plane - lo) / scale), 0, 255).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(u8).save(buffer, format="JPEG", quality=quality)
    buffer.seek(0)
    with Image.open(buffer) as decoded:
        restored = np.asarray(decoded.convert("L"), dtype=np.float64)
    return restored * scale + lo


def _jpeg(x: np.ndarray, quality: int) -> np.ndarray:
    return np.stack([_jpeg_plane(plane, quality) for plane in x])


def _crop_scale(x: np.ndarray, keep: float) -> np.ndarray:
    """Center crop keeping ``keep`` of each side, resized back to H×W."""
    _, h, w = x.shape
    ch, cw = keep * h, keep * w
    top, left = (h - ch) / 2.0, (w - cw) / 2.0
    # pixel centers of the output grid sampled inside the window
    rows = top + (np.arange(h) + 0.5) * (ch / h) - 0.5
    cols = left + (np.arange(w) + 0.5) * (cw / w) - 0.5
    grid = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([ndimage.map_coordinates(plane, grid, order=1, mode="nearest") for plane in x])


def _blur(x: np.ndarray, radius: float) -> np.ndarray:
    if radius == 0:
        return x.copy()
    sigma = radius / 2.0
    return ndimage.gaussian_filter(x, sigma=(0.0, sigma, sigma), truncate=BLUR_TRUNCATE, mode="nearest")


def _channel_range(x: np.ndarray) -> np.ndarray:
    return (x.max(axis=(1, 2)) - x.min(axis=(1, 2)))[:, None, None]


def _lowpass(img: LatentTensor, keep: float) -> LatentTensor:
    """Zero every frequency outside the central ``keep`` fraction of the spectrum."""
    _, h, w = img.shape
    du = (np.arange(h) - h // 2) / h
    dv = (np.arange(w) - w // 2) / w
    radius = np.hypot(du[:, None], dv[None, :])
    n_keep = max(1, int(round(keep * h * w)))
    cutoff = np.sort(radius, axis=None, kind="stable")[n_keep - 1]
    # ties at the cutoff are kept so conjugate pairs stay together
    passband = radius <= cutoff
    spectrum = fft2(img)
    return ifft2(Spectrum(np.where(passband[None, :, :], spectrum.data, 0)))


def apply_attack(img: LatentTensor, spec: AttackSpec, rng: Rng | None = None, *,
                 predictor: EpsilonPredictor | None = None,
                 schedule: AlphaSchedule | None = None) -> LatentTensor:
    """Apply one attack. ``rng`` feeds the stochastic kinds; the diffusion
    regeneration attack also needs the predictor and schedule of the world."""
    x = img.data
    kind, value = spec.kind, spec.value
    if kind == "none":
        return img
    if kind == "rotate":
        return img.like(_rotate(x, value))
    if kind == "jpeg":
        return img.like(_jpeg(x, value))
    if kind == "crop_scale":
        return img.like(_crop_scale(x, value))
    if kind == "blur":
        return img.like(_blur(x, value))
    if kind == "brightness":
        mean = x.mean(axis=(1, 2), keepdims=True)
        return img.like(mean + value * (x - mean))
    if kind == "lowpass_recon":
        return _lowpass(img, value)
    if rng is None:
        raise InvalidArgumentError(f"{kind} needs a random stream")
    if kind == "gaussian_noise":
        return img.like(x + value * _channel_range(x) * rng.standard_normal(x.shape))
    # diffusion_regen
    if predictor is None or schedule is None:
        raise InvalidArgumentError("diffusion_regen needs the predictor and schedule")
    if value > schedule.steps:
        raise InvalidArgumentError(f"diffusion_regen step {value} exceeds the schedule's {schedule.steps} steps")
    noisy = forward_noise(img, sample_gaussian(rng, img.shape), value, schedule)
    return ddim_sample(noisy, predictor, schedule, start_step=value)
