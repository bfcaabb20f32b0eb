"""Sectioned key-value run configuration (INI syntax) with a fixed schema.

Example::

    [network]
    levels = 3
    decoder_channels = 3, 3, 3, 3

    [train]
    learning_rate = 1e-4
    max_steps = 2000

    [loss]
    lambda1 = 0.1
"""
import configparser
import hashlib
import json

from .losses import LossWeights
from .network import NetworkConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


SCHEMA = {
    "data": {"patch_size": int, "stride": int, "rot90": _bool, "complete": _bool},
    "network": {
        "levels": int, "base_channels": int, "dense_layers_per_block": int,
        "dense_growth": int, "transition_channels": int, "depth_channels": int,
        "decoder_channels": _int_list, "upsample_mode": str, "residual": _bool, "seed": int,
    },
    "train": {
        "learning_rate": float, "batch_size": int, "epochs": int, "seed": int,
        "checkpoint_every": int, "precision": str, "max_steps": int,
    },
    "loss": {"lambda1": float, "lambda2": float, "lambda3": float},
    "eval": {"report_scale": float, "gf_radius": int, "gf_eps": float},
}

DEFAULTS = {
    "data": {"patch_size": 128, "stride": 32, "rot90": False, "complete": True},
    "network": {},
    "train": {},
    "loss": {},
    "eval": {"report_scale": 255.0, "gf_radius": 8, "gf_eps": 1e-4},
}


class RunConfig:
    """Validated configuration; ``section(name)`` returns a plain dict."""

    def __init__(self, values=None):
        self._values = {s: dict(DEFAULTS[s]) for s in SCHEMA}
        for section, items in (values or {}).items():
            for key, value in items.items():
                self.set(section, key, value)

    def set(self, section, key, value):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        try:
            self._values[section][key] = SCHEMA[section][key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {value!r} ({exc})") from exc

    def section(self, name):
        return dict(self._values[name])

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls({s: dict(parser.items(s)) for s in parser.sections()})

    def override(self, dotted):
        """Apply ``section.key=value`` strings."""
        for item in dotted:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            lhs, value = item.split("=", 1)
            section, key = lhs.split(".", 1)
            self.set(section.strip(), key.strip(), value.strip())

    def network_config(self):
        try:
            return NetworkConfig(**self.section("network"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [network] section: {exc}") from exc

    def loss_weights(self):
        try:
            return LossWeights(**self.section("loss"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [loss] section: {exc}") from exc

    def train_config(self, scale):
        try:
            return TrainConfig(loss_weights=self.loss_weights(), scale=scale, **self.section("train"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [train] section: {exc}") from exc

    def digest(self):
        blob = json.dumps(self._values, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()
