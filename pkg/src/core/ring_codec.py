"""Concentric-ring message codec in the centered Fourier layout.

Ring i (1-based) holds every bin whose Euclidean distance to the center
rounds (half away from zero) to i. Bit i-1 of a message is written as +S
(bit 1) or -S (bit 0) on every bin of ring i, and read back from the sign of
the ring's mean real part.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError
from .tensors import Rng, Spectrum


@dataclass(frozen=True)
class WatermarkKey:
    radius: int
    scaler: float
    height: int
    width: int
    channel: int = 0

    def __post_init__(self):
        if self.radius < 1:
            raise InvalidArgumentError(f"radius must be positive, got {self.radius}")
        if self.height < 1 or self.width < 1:
            raise InvalidArgumentError(f"key dims must be positive, got {self.height}x{self.width}")
        limit = min(self.height // 2, self.width // 2)
        if self.radius >= limit:
            raise InvalidArgumentError(
                f"radius r={self.radius} must satisfy r < min(H//2, W//2) = {limit} "
                f"for a {self.height}x{self.width} spectrum"
            )
        if not self.scaler > 0 or not math.isfinite(self.scaler):
            raise InvalidArgumentError(f"message scaler S must be a positive finite number, got {self.scaler}")
        if self.channel < 0:
            raise InvalidArgumentError(f"channel must be non-negative, got {self.channel}")

    @property
    def capacity(self) -> int:
        return 2**self.radius

    def to_json(self) -> dict:
        return {"r": self.radius, "S": float(self.scaler), "channel": self.channel,
                "height": self.height, "width": self.width}

    @classmethod
    def from_json(cls, obj: dict) -> WatermarkKey:
        unknown = set(obj) - {"r", "S", "channel", "height", "width"}
        if unknown:
            raise InvalidArgumentError(f"unknown key fields: {sorted(unknown)}")
        return cls(radius=int(obj["r"]), scaler=float(obj["S"]), height=int(obj["height"]),
                   width=int(obj["width"]), channel=int(obj.get("channel", 0)))


@dataclass(frozen=True, eq=False)
class RingMask:
    """Ring index sets for one key. rings[i] = (rows, cols) of ring i+1."""

    channel: int
    height: int
    width: int
    rings: tuple[tuple[np.ndarray, np.ndarray], ...]
    union: np.ndarray
    # One bin per conjugate pair: rows/cols with (du, dv) lexicographically positive.
    half: tuple[np.ndarray, np.ndarray]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(rows) for rows, _ in self.rings)

    @property
    def count(self) -> int:
        return int(self.union.sum())

    @property
    def center(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2


@dataclass(frozen=True)
class Message:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise InvalidArgumentError("message bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return self.to_string()

    def to_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_string(cls, text: str) -> Message:
        if not text or any(ch not in "01" for ch in text):
            raise InvalidArgumentError(f"message must be a non-empty bit string, got {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @classmethod
    def from_int(cls, value: int, length: int) -> Message:
        """Big-endian: bits[0] is the most significant bit."""
        if not 0 <= value < 2**length:
            raise InvalidArgumentError(f"value {value} does not fit in {length} bits")
        return cls(tuple((value >> (length - 1 - i)) & 1 for i in range(length)))

    def to_int(self) -> int:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return value

    @classmethod
    def random(cls, rng: Rng, length: int) -> Message:
        return cls(tuple(int(b) for b in rng.integers(2, size=length)))


@dataclass(frozen=True, eq=False)
class WatermarkPattern:
    """Real ±S value per ring; zero imaginary part."""

    key: WatermarkKey
    values: tuple[float, ...]

    def dense(self) -> np.ndarray:
        """H×W complex plane with the pattern on the mask and zeros elsewhere."""
        mask = build_mask(self.key)
        plane = np.zeros((self.key.height, self.key.width), dtype=np.complex128)
        for value, (rows, cols) in zip(self.values, mask.rings):
            plane[rows, cols] = value
        return plane


def radius_for_capacity(n_messages: int) -> int:
    """Smallest radius whose 2^r messages cover n_messages."""
    if n_messages < 1:
        raise InvalidArgumentError(f"need at least one message, got {n_messages}")
    return max(1, math.ceil(math.log2(n_messages)))


@lru_cache(maxsize=64)
def _ring_geometry(radius: int, height: int, width: int):
    cu, cv = height // 2, width // 2
    du = np.arange(height)[:, None] - cu
    dv = np.arange(width)[None, :] - cv
    dist = np.sqrt(du * du + dv * dv)
    # distances are non-negative, so floor(d + 0.5) rounds half away from zero
    ring_index = np.floor(dist + 0.5).astype(np.int64)
    rings = []
    for i in range(1, radius + 1):
        rows, cols = np.nonzero(ring_index == i)
        rows.flags.writeable = False
        cols.flags.writeable = False
        rings.append((rows, cols))
    union = (ring_index >= 1) & (ring_index <= radius)
    union.flags.writeable = False
    positive = (du > 0) | ((du == 0) & (dv > 0))
    half_rows, half_cols = np.nonzero(union & positive)
    half_rows.flags.writeable = False
    half_cols.flags.writeable = False
    return tuple(rings), union, (half_rows, half_cols)


def build_mask(key: WatermarkKey) -> RingMask:
    """Ring index sets for ``key``; geometry is shared across keys of the same size."""
    rings, union, half = _ring_geometry(key.radius, key.height, key.width)
    return RingMask(channel=key.channel, height=key.height, width=key.width,
                    rings=rings, union=union, half=half)


def encode(msg: Message, key: WatermarkKey) -> WatermarkPattern:
    """Map each bit to +S (1) or -S (0) on its ring."""
    if len(msg) != key.radius:
        raise InvalidArgumentError(f"message has {len(msg)} bits, key radius is {key.radius}")
    s = float(key.scaler)
    return WatermarkPattern(key=key, values=tuple(s if b else -s for b in msg.bits))


def _check_dims(s: Spectrum, key: WatermarkKey) -> None:
    if (s.height, s.width) != (key.height, key.width):
        raise InvalidArgumentError(
            f"spectrum is {s.height}x{s.width}, key was built for {key.height}x{key.width}"
        )
    if key.channel >= s.channels:
        raise InvalidArgumentError(f"watermark channel {key.channel} out of range for {s.channels} channels")


def embed(s: Spectrum, pattern: WatermarkPattern) -> Spectrum:
    """Overwrite the masked bins of the watermark channel with the pattern."""
    key = pattern.key
    _check_dims(s, key)
    mask = build_mask(key)
    plane = np.array(s.data[key.channel])
    plane[mask.union] = pattern.dense()[mask.union]
    return s.copy_with_channel(key.channel, plane)


def ring_means(y: Spectrum, key: WatermarkKey) -> tuple[float, ...]:
    """Mean real part of the recovered spectrum on each ring, innermost first."""
    _check_dims(y, key)
    plane = y.data[key.channel].real
    return tuple(float(plane[rows, cols].mean()) for rows, cols in build_mask(key).rings)


def decode_bits(y: Spectrum, key: WatermarkKey) -> Message:
    # an exact zero mean decodes as 0
    return Message(tuple(1 if m > 0 else 0 for m in ring_means(y, key)))
