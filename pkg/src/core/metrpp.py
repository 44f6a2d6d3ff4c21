"""METR++ composition.

A global message space of 2^r · n values is split into n groups of 2^r. The
group ID occupies the high-order bits and travels through a signature channel
(a binary symmetric channel with attack-dependent flip probability, standing
in for a fine-tuned decoder plus extractor network); the low r bits travel
through the ring watermark.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import ATTACK_PARAMS, AttackSpec, apply_attack
from .diffusion import AlphaSchedule, EpsilonPredictor, detect_message, generate_watermarked
from .errors import InvalidArgumentError
from .ring_codec import Message, WatermarkKey
from .tensors import Rng

DEFAULT_SIGNATURE_BITS = 48


def capacity(radius: int, groups: int) -> int:
    """Number of global messages: 2^r per group, ``groups`` groups."""
    return (1 << radius) * groups


@dataclass(frozen=True)
class GlobalMessage:
    value: int
    radius: int
    groups: int

    def __post_init__(self):
        if self.radius < 1 or self.groups < 1:
            raise InvalidArgumentError(f"need r >= 1 and n >= 1, got r={self.radius}, n={self.groups}")
        if not 0 <= self.value < capacity(self.radius, self.groups):
            raise InvalidArgumentError(
                f"value {self.value} outside [0, {capacity(self.radius, self.groups)}) for r={self.radius}, n={self.groups}"
            )

    @property
    def group_id(self) -> int:
        return self.value >> self.radius

    @property
    def inner(self) -> Message:
        return Message.from_int(self.value & ((1 << self.radius) - 1), self.radius)

    def split(self) -> tuple[int, Message]:
        return self.group_id, self.inner

    @classmethod
    def join(cls, group_id: int, inner: Message, groups: int) -> GlobalMessage:
        """Inverse of split."""
        if not 0 <= group_id < groups:
            raise InvalidArgumentError(f"group id {group_id} outside [0, {groups})")
        return cls(value=(group_id << len(inner)) | inner.to_int(), radius=len(inner), groups=groups)

    def to_json(self) -> dict:
        return {"value": self.value, "r": self.radius, "n": self.groups}


@dataclass(frozen=True)
class SignatureChannel:
    bits: int = DEFAULT_SIGNATURE_BITS
    flip_prob: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bits < 1:
            raise InvalidArgumentError(f"signature needs at least one bit, got {self.bits}")
        for kind, p in self.flip_prob.items():
            if kind not in ATTACK_PARAMS:
                raise InvalidArgumentError(f"flip_prob names unknown attack kind {kind!r}")
            if not 0 <= p <= 0.5:
                raise InvalidArgumentError(f"flip_prob[{kind}] must be in [0, 0.5], got {p}")

    def __hash__(self):
        return hash((self.bits, tuple(sorted(self.flip_prob.items()))))

    def prob(self, attack: AttackSpec) -> float:
        """Flip probability this channel applies under ``attack``."""
        return float(self.flip_prob.get(attack.kind, 0.0))


@dataclass(frozen=True)
class SignatureReading:
    group_id: int
    bit_errors: int


def transmit_signature(group_id: int, channel: SignatureChannel, attack: AttackSpec, rng: Rng) -> SignatureReading:
    """Flip each of the channel's bits independently with the attack's probability."""
    if not 0 <= group_id < (1 << channel.bits):
        raise InvalidArgumentError(f"group id {group_id} does not fit in {channel.bits} bits")
    flips = rng.uniform(channel.bits) < channel.prob(attack)
    sent = np.array(Message.from_int(group_id, channel.bits).bits, dtype=np.int64)
    received = Message(tuple(int(b) for b in sent ^ flips.astype(np.int64)))
    return SignatureReading(group_id=received.to_int(), bit_errors=int(flips.sum()))


@dataclass(frozen=True)
class MetrppOutcome:
    decoded: GlobalMessage | None
    inner: Message
    group_id: int
    metr_ok: bool
    sig_ok: bool
    inner_bit_errors: int
    sig_bit_errors: int

    @property
    def ok(self) -> bool:
        return self.metr_ok and self.sig_ok


def encode_decode_metrpp(msg: GlobalMessage, key: WatermarkKey, pred: EpsilonPredictor, sched: AlphaSchedule,
                         attack: AttackSpec, channel: SignatureChannel, rng: Rng,
                         channels: int = 1, p0: float = 0.01) -> MetrppOutcome:
    """Send the inner message through generate/attack/detect and the group ID
    through the signature channel; rebuild the global message only when both
    parts come back exact."""
    if key.radius != msg.radius:
        raise InvalidArgumentError(f"key radius {key.radius} differs from message radius {msg.radius}")
    group_id, inner = msg.split()
    gen = generate_watermarked(rng.child(0), key, inner, pred, sched, channels)
    attacked = apply_attack(gen.image, attack, rng.child(1), predictor=pred, schedule=sched)
    report = detect_message(attacked, key, pred, sched, p0=p0)
    reading = transmit_signature(group_id, channel, attack, rng.child(2))
    metr_ok = report.bits == inner
    sig_ok = reading.group_id == group_id
    decoded = None
    if metr_ok and sig_ok:
        decoded = GlobalMessage.join(reading.group_id, report.bits, msg.groups)
    inner_errors = sum(a != b for a, b in zip(inner.bits, report.bits.bits))
    return MetrppOutcome(decoded=decoded, inner=report.bits, group_id=reading.group_id, metr_ok=metr_ok,
                         sig_ok=sig_ok, inner_bit_errors=inner_errors, sig_bit_errors=reading.bit_errors)
