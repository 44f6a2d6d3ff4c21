"""Experiment documents: one JSON file describing the world, the key, the
messages, the attack list and the evaluation settings.

Missing sections fall back to ``config/config.py``. Unknown keys and violated
invariants raise ConfigError carrying the line of the offending key.
"""
from __future__ import annotations

import dataclasses
import json
import math
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from config import config

from .attacks import REFERENCE_ATTACKS, AttackSpec
from .detection_stats import GCriterionConstants
from .diffusion import AlphaSchedule, EpsilonPredictor, make_predictor, make_schedule
from .errors import ConfigError, InvalidArgumentError
from .metrpp import SignatureChannel
from .ring_codec import Message, WatermarkKey, radius_for_capacity
from .tensors import Rng
from .tuning import ScalerSearchConfig

SECTIONS = {
    "seed": None,
    "shape": {"channels", "height", "width"},
    "schedule": {"steps", "beta_start", "beta_end"},
    "predictor": None,
    "key": {"r", "capacity", "S", "channel"},
    "messages": {"source", "bits", "count"},
    "attacks": None,
    "p0": None,
    "trials": None,
    "output_dir": None,
    "tuning": {"s_min", "s_max", "s_step", "quality_budget", "trials", "k", "b"},
    "signature": {"bits", "groups", "flip_prob"},
}
PREDICTOR_KEYS = {"kind", "coefficients", "mean", "variance"}


@contextmanager
def _section_errors(section: str):
    try:
        yield
    except InvalidArgumentError as e:
        if not hasattr(e, "section"):
            e.section = section
        raise


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    seed: int = config.SEED
    channels: int = config.CHANNELS
    height: int = config.HEIGHT
    width: int = config.WIDTH
    schedule_params: dict = field(default_factory=lambda: {
        "steps": config.STEPS, "beta_start": config.BETA_START, "beta_end": config.BETA_END})
    predictor_spec: dict = field(default_factory=lambda: dict(config.PREDICTOR))
    radius: int = config.RADIUS
    scaler: float = config.SCALER
    watermark_channel: int = config.WATERMARK_CHANNEL
    message_source: str = "random"
    message_bits: Message | None = None
    message_count: int | None = None
    attacks: tuple[AttackSpec, ...] = REFERENCE_ATTACKS
    p0: float = config.P0
    trials: int = config.TRIALS
    output_dir: Path = Path(config.OUTPUT_DIR)
    tuning: ScalerSearchConfig = field(default_factory=lambda: ScalerSearchConfig(
        s_min=config.S_MIN, s_max=config.S_MAX, s_step=config.S_STEP, trials=config.TUNING_TRIALS,
        consts=GCriterionConstants(k=config.G_K, b=config.G_B)))
    signature: SignatureChannel = field(default_factory=lambda: SignatureChannel(bits=config.SIGNATURE_BITS))
    groups: int = config.SIGNATURE_GROUPS

    def __post_init__(self):
        # build once so every invariant is checked at load
        with _section_errors("schedule"):
            object.__setattr__(self, "_schedule", make_schedule(**self.schedule_params))
        with _section_errors("predictor"):
            object.__setattr__(self, "_predictor", make_predictor(self.predictor_spec))
        with _section_errors("key"):
            key = WatermarkKey(radius=self.radius, scaler=self.scaler, height=self.height, width=self.width,
                               channel=self.watermark_channel)
            if key.channel >= self.channels:
                raise InvalidArgumentError(f"watermark channel {key.channel} out of range for {self.channels} channels")
        object.__setattr__(self, "_key", key)
        with _section_errors("messages"):
            if self.message_source == "fixed":
                if self.message_bits is None or len(self.message_bits) != self.radius:
                    raise InvalidArgumentError(f"fixed message must have exactly r={self.radius} bits")
            elif self.message_source == "random":
                if self.message_count is not None and self.message_count < 1:
                    raise InvalidArgumentError(f"message count must be >= 1, got {self.message_count}")
            else:
                raise InvalidArgumentError(f"message source must be 'fixed' or 'random', got {self.message_source!r}")
        with _section_errors("p0"):
            if not 0 < self.p0 < 1:
                raise InvalidArgumentError(f"p0 must be in (0, 1), got {self.p0}")
        with _section_errors("trials"):
            if self.trials < 1:
                raise InvalidArgumentError(f"trials must be >= 1, got {self.trials}")
        with _section_errors("seed"):
            if not 0 <= self.seed < 2**64:
                raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        with _section_errors("signature"):
            if self.groups < 1 or self.groups > 2**self.signature.bits:
                raise InvalidArgumentError(f"{self.groups} groups do not fit in {self.signature.bits} signature bits")
        with _section_errors("attacks"):
            for attack in self.attacks:
                if attack.kind == "diffusion_regen" and attack.value > self.schedule_params["steps"]:
                    raise InvalidArgumentError(
                        f"diffusion_regen step {attack.value} exceeds schedule steps {self.schedule_params['steps']}"
                    )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.channels, self.height, self.width

    @property
    def schedule(self) -> AlphaSchedule:
        return self._schedule

    @property
    def predictor(self) -> EpsilonPredictor:
        return self._predictor

    @property
    def key(self) -> WatermarkKey:
        return self._key

    @property
    def rng(self) -> Rng:
        return Rng(self.seed)

    def message_for(self, index: int) -> Message:
        """Reference message of trial ``index``."""
        if self.message_source == "fixed":
            return self.message_bits
        slot = index if self.message_count is None else index % self.message_count
        return Message.random(self.rng.child(2, slot), self.radius)

    def with_overrides(self, seed: int | None = None, output_dir: str | Path | None = None) -> ExperimentConfig:
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        return dataclasses.replace(self, **changes) if changes else self

    def to_json(self) -> dict:
        messages = {"source": self.message_source}
        if self.message_bits is not None:
            messages["bits"] = self.message_bits.to_string()
        if self.message_count is not None:
            messages["count"] = self.message_count
        budget = self.tuning.quality_budget
        return {
            "seed": self.seed,
            "shape": {"channels": self.channels, "height": self.height, "width": self.width},
            "schedule": dict(self.schedule_params),
            "predictor": self.predictor.to_json(),
            "key": {"r": self.radius, "S": self.scaler, "channel": self.watermark_channel},
            "messages": messages,
            "attacks": [a.to_json() for a in self.attacks],
            "p0": self.p0,
            "trials": self.trials,
            "output_dir": str(self.output_dir),
            "tuning": {"s_min": self.tuning.s_min, "s_max": self.tuning.s_max, "s_step": self.tuning.s_step,
                       "quality_budget": None if math.isinf(budget) else budget, "trials": self.tuning.trials,
                       "k": self.tuning.consts.k, "b": self.tuning.consts.b},
            "signature": {"bits": self.signature.bits, "groups": self.groups,
                          "flip_prob": dict(self.signature.flip_prob)},
        }


def _line_of(text: str, name: str) -> int | None:
    """Line of the first ``"name":`` in the document, for error messages."""
    match = re.search(r'"%s"\s*:' % re.escape(name), text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def _section(doc: dict, name: str, text: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be an object", _line_of(text, name))
    allowed = SECTIONS[name]
    for key in value:
        if allowed is not None and key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section '{name}'", _line_of(text, key))
    return value


def _number(value, what: str, text: str, name: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}", _line_of(text, name))
    if integer:
        if int(value) != value:
            raise ConfigError(f"{what} must be an integer, got {value!r}", _line_of(text, name))
        return int(value)
    return float(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate an experiment document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", e.lineno) from e
    if not isinstance(doc, dict):
        raise ConfigError("experiment document must be a JSON object", 1)
    for name in doc:
        if name not in SECTIONS:
            raise ConfigError(f"unknown key '{name}'", _line_of(text, name))

    kwargs = {}
    current = "seed"
    try:
        if "seed" in doc:
            kwargs["seed"] = _number(doc["seed"], "seed", text, "seed", integer=True)
        current = "shape"
        shape = _section(doc, "shape", text)
        for name in ("channels", "height", "width"):
            if name in shape:
                kwargs[name] = _number(shape[name], f"shape.{name}", text, name, integer=True)
        current = "schedule"
        schedule = _section(doc, "schedule", text)
        params = {"steps": config.STEPS, "beta_start": config.BETA_START, "beta_end": config.BETA_END}
        for name in params:
            if name in schedule:
                params[name] = _number(schedule[name], f"schedule.{name}", text, name, integer=name == "steps")
        kwargs["schedule_params"] = params
        current = "predictor"
        if "predictor" in doc:
            if not isinstance(doc["predictor"], dict):
                raise ConfigError("section 'predictor' must be an object", _line_of(text, "predictor"))
            for name in doc["predictor"]:
                if name not in PREDICTOR_KEYS:
                    raise ConfigError(f"unknown key '{name}' in section 'predictor'", _line_of(text, name))
            kwargs["predictor_spec"] = dict(doc["predictor"])
        current = "key"
        key = _section(doc, "key", text)
        if "r" in key and "capacity" in key:
            raise ConfigError("give either key.r or key.capacity, not both", _line_of(text, "capacity"))
        if "r" in key:
            kwargs["radius"] = _number(key["r"], "key.r", text, "r", integer=True)
        elif "capacity" in key:
            # number of distinct messages the key must carry
            kwargs["radius"] = radius_for_capacity(
                _number(key["capacity"], "key.capacity", text, "capacity", integer=True))
        if "S" in key:
            kwargs["scaler"] = _number(key["S"], "key.S", text, "S")
        if "channel" in key:
            kwargs["watermark_channel"] = _number(key["channel"], "key.channel", text, "channel", integer=True)
        current = "messages"
        messages = _section(doc, "messages", text)
        if messages:
            kwargs["message_source"] = messages.get("source", "random")
            if "bits" in messages:
                kwargs["message_bits"] = Message.from_string(str(messages["bits"]))
            if "count" in messages:
                kwargs["message_count"] = _number(messages["count"], "messages.count", text, "count", integer=True)
        current = "attacks"
        if "attacks" in doc:
            if not isinstance(doc["attacks"], list):
                raise ConfigError("'attacks' must be a list", _line_of(text, "attacks"))
            if not all(isinstance(a, dict) for a in doc["attacks"]):
                raise ConfigError("every attack must be an object", _line_of(text, "attacks"))
            for attack in doc["attacks"]:
                for name in attack:
                    if name not in ("kind", "params"):
                        raise ConfigError(f"unknown key '{name}' in an attack", _line_of(text, name))
            kwargs["attacks"] = tuple(AttackSpec.from_json(a) for a in doc["attacks"])
        for name in ("p0", "trials"):
            current = name
            if name in doc:
                kwargs[name] = _number(doc[name], name, text, name, integer=name == "trials")
        if "output_dir" in doc:
            kwargs["output_dir"] = Path(str(doc["output_dir"]))
        current = "tuning"
        tuning = _section(doc, "tuning", text)
        if tuning:
            budget = tuning.get("quality_budget")
            kwargs["tuning"] = ScalerSearchConfig(
                s_min=_number(tuning.get("s_min", config.S_MIN), "tuning.s_min", text, "s_min"),
                s_max=_number(tuning.get("s_max", config.S_MAX), "tuning.s_max", text, "s_max"),
                s_step=_number(tuning.get("s_step", config.S_STEP), "tuning.s_step", text, "s_step"),
                quality_budget=math.inf if budget is None else _number(
                    budget, "tuning.quality_budget", text, "quality_budget"),
                trials=_number(tuning.get("trials", config.TUNING_TRIALS), "tuning.trials", text, "trials",
                               integer=True),
                consts=GCriterionConstants(k=_number(tuning.get("k", config.G_K), "tuning.k", text, "k"),
                                           b=_number(tuning.get("b", config.G_B), "tuning.b", text, "b")),
            )
        current = "signature"
        signature = _section(doc, "signature", text)
        if signature:
            flips = signature.get("flip_prob", {})
            if not isinstance(flips, dict):
                raise ConfigError("signature.flip_prob must be an object", _line_of(text, "flip_prob"))
            kwargs["signature"] = SignatureChannel(
                bits=_number(signature.get("bits", config.SIGNATURE_BITS), "signature.bits", text, "bits",
                             integer=True),
                flip_prob={k: _number(v, f"flip_prob.{k}", text, k) for k, v in flips.items()},
            )
            if "groups" in signature:
                kwargs["groups"] = _number(signature["groups"], "signature.groups", text, "groups", integer=True)
        current = None
        return ExperimentConfig(**kwargs)
    except InvalidArgumentError as e:
        section = getattr(e, "section", None) or current
        raise ConfigError(str(e), _line_of(text, section) if section else None) from e


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and parse an experiment file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
    return parse_config(text)
