"""Flat ``section.key = value`` experiment configuration.

Every key has a default below; a config file or ``--set`` override may
only name known keys.  Values are coerced to the type of the default.
"""

import numpy as np

from ..exceptions import ConfigError

# key -> default.  ``None`` ("auto") defers to the task or variant default.
DEFAULTS = {
    "env": "point_mass",
    "seed": 0,
    "data.n_traj": 100,
    "data.goal_source": "train",
    "data.kp": None,
    "data.kd": None,
    "data.horizon": 100,
    "data.action_noise": 0.5,
    "data.tolerance": 0.1,
    "data.her": False,
    "noise.enabled": False,
    "noise.dim": 0,
    "noise.threshold": 0.0,
    "noise.amplitude": 0.1,
    "model.hidden": (64, 64),
    "model.learning_rate": 1e-3,
    "model.batch_size": 256,
    "model.epochs": 200,
    "model.validation_fraction": 0.1,
    "model.predict_delta": True,
    "model.weight_decay": 0.3,
    "bounds.variant": "v1",
    "bounds.lambda_e": None,
    "bounds.lambda_v": 10.0,
    "bounds.learning_rate": 1e-2,
    "bounds.n_iter": 2000,
    "bounds.batch_size": 256,
    "bounds.offsets_per_sample": 4,
    "bounds.entropy_floor": 1e-6,
    "bounds.init_width": 0.1,
    "augment.passes": 10,
    "augment.per": "transition",
    "crr.gamma": 0.99,
    "crr.beta": 1.0,
    "crr.m": 4,
    "crr.weight_clip": 20.0,
    "crr.policy_lr": 1e-3,
    "crr.critic_lr": 1e-3,
    "crr.batch_size": 256,
    "crr.steps": 50_000,
    "crr.target_period": 100,
    "crr.hidden": (64, 64),
    "crr.log_every": 1000,
    "eval.episodes": 100,
    "eval.horizon": 100,
}

_CHOICES = {
    "env": ("point_mass", "reacher"),
    "data.goal_source": ("train", "test"),
    "bounds.variant": ("v1", "v2"),
    "augment.per": ("transition", "trajectory"),
}

_AUTO_KEYS = {k for k, v in DEFAULTS.items() if v is None}
_FLOAT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, float)} | _AUTO_KEYS


def _coerce(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if key in _AUTO_KEYS:
            return None if text.lower() in ("", "auto", "none") else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return text


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ExperimentConfig:
    """Validated mapping of dotted keys to typed values."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value) if isinstance(value, str) else value

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def validate(self):
        v = self.values
        for key, allowed in _CHOICES.items():
            if v[key] not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {v[key]!r}")
        positive_int = ("data.n_traj", "data.horizon", "model.batch_size", "model.epochs",
                        "bounds.n_iter", "bounds.batch_size", "bounds.offsets_per_sample",
                        "augment.passes", "crr.m", "crr.batch_size", "crr.target_period",
                        "eval.episodes", "eval.horizon")
        for key in positive_int:
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if v["crr.steps"] < 0 or v["crr.log_every"] < 0 or v["model.weight_decay"] < 0:
            raise ConfigError("crr.steps, crr.log_every and model.weight_decay must be >= 0")
        if not 0 < v["crr.gamma"] < 1:
            raise ConfigError("crr.gamma must lie in (0, 1)")
        if not v["crr.beta"] > 0:
            raise ConfigError("crr.beta must be positive")
        if not 0 <= v["model.validation_fraction"] < 1:
            raise ConfigError("model.validation_fraction must lie in [0, 1)")
        for key in ("data.kp", "data.kd"):
            if v[key] is not None and v[key] < 0:
                raise ConfigError(f"{key} must be >= 0")
        if v["seed"] < 0:
            raise ConfigError("seed must be >= 0")
        for key in _FLOAT_KEYS:
            if v[key] is not None and not np.isfinite(v[key]):
                raise ConfigError(f"{key} must be finite")
        if not (v["model.hidden"] and v["crr.hidden"]):
            raise ConfigError("hidden layer lists may not be empty")
        return self

    def dumps(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.values.items()))

    @classmethod
    def parse(cls, text, source="<config>"):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
        return cls(values)

    @classmethod
    def load(cls, path=None, overrides=()):
        if path is None:
            cfg = cls()
        else:
            try:
                with open(path) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
            cfg = cls.parse(text, str(path))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, value = item.split("=", 1)
            cfg.set(key.strip(), value)
        return cfg.validate()


def stage_seed(master, stage_index):
    """Seed for one stage, derived from the master seed and the stage index only."""
    return int(np.random.SeedSequence([int(master), int(stage_index)]).generate_state(1)[0])
