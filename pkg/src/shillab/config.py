"""Experiment configuration: sectioned ``key = value`` files (or JSON) with env overrides.

Every key lives in a section. Values are typed by :data:`SCHEMA`; unknown
sections or keys are rejected. Environment variables named
``SHILLAB_<SECTION>__<KEY>`` override file values, e.g.
``SHILLAB_DIFFUSION__STEPS=50``.
"""

import configparser
import copy
import json
import os

from .checkpoint import config_hash
from .errors import ConfigError

ENV_PREFIX = "SHILLAB_"

VICTIM_KINDS = ("MF", "LGN", "NCF")
ATTACK_METHODS = (
    "random",
    "average",
    "bandwagon",
    "diffusion",
    "diffusion-sum",
    "diffusion-concat",
    "diffusion-uncond",
    "ae-only",
)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(item_type):
    def parse(v):
        if isinstance(v, (list, tuple)):
            items = list(v)
        else:
            items = [x for x in (p.strip() for p in str(v).split(",")) if x]
        return [item_type(x) for x in items]
    parse.__name__ = f"list[{item_type.__name__}]"
    return parse


def _optional_int(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return int(v)


def _optional_float(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return float(v)


SCHEMA = {
    "data": {
        "path": (str, "data/ml-100k/u.data"),
        "format": (str, "movielens-tab"),
        "min_rating": (float, 0.0),
        "split_seed": (int, 0),
        "attacker_fraction": (float, 0.25),
        "attacker_level": (str, "interaction"),
        "attacker_seed": (int, 0),
    },
    "victims": {
        "kinds": (_list(str), ["MF"]),
        "lr": (_optional_float, None),
        "weight_decay": (_optional_float, None),
        "epochs": (int, 200),
        "patience": (int, 10),
        "layers": (int, 2),
        "seed": (int, 0),
    },
    "attack": {
        "methods": (_list(str), ["random", "diffusion"]),
        "k": (int, 50),
        "n_targets": (int, 5),
        "targets": (_list(int), []),
        "target_pool": (float, 0.8),
        "budget": (int, 0),
        "bandwagon_pool": (int, 0),
        "seed": (int, 0),
        "target_seed": (_optional_int, None),
    },
    "autoencoder": {
        "dim": (int, 64),
        "epochs": (int, 150),
        "lr": (float, 1e-3),
        "weight_decay": (float, 1e-5),
        "dropout": (float, 0.5),
        "batch_size": (int, 128),
    },
    "diffusion": {
        "steps": (int, 100),
        "beta_min": (float, 1e-4),
        "beta_max": (float, 2e-2),
        "epochs": (int, 300),
        "lr": (float, 1e-3),
        "weight_decay": (float, 1e-5),
        "batch_size": (int, 128),
        "bottleneck": (int, 32),
        "layers": (int, 2),
        "cond_source": (str, "targets"),
        "attn_scale": (str, "bottleneck"),
        "force_targets": (_bool, True),
        "posterior_variance": (_bool, False),
        "budget_min": (int, 5),
        "budget_max": (int, 100),
    },
    "eval": {
        "K": (int, 10),
        "detect": (_bool, True),
        "q": (int, 10),
        "flag_fraction": (float, 0.55),
        "pca": (_bool, True),
    },
    "run": {
        "out": (str, "out"),
    },
}

# Keys a grid may sweep.
GRID_AXES = (
    "victims.lr",
    "victims.weight_decay",
    "victims.layers",
    "diffusion.steps",
    "diffusion.beta_min",
    "diffusion.beta_max",
    "diffusion.layers",
)


def _coerce(section, key, value):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    parse = SCHEMA[section][key][0]
    try:
        return parse(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


class ExperimentConfig:
    """Validated, fully populated experiment settings addressed as ``"section.key"``."""

    def __init__(self, values=None):
        self.values = {s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        for section, keys in (values or {}).items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            if not isinstance(keys, dict):
                raise ConfigError(f"section [{section}] must be a mapping")
            for key, value in keys.items():
                self.values[section][key] = _coerce(section, key, value)
        self.validate()

    def __getitem__(self, dotted):
        section, key = self._split(dotted)
        return self.values[section][key]

    @staticmethod
    def _split(dotted):
        if "." not in dotted:
            raise ConfigError(f"expected 'section.key', got {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        return section, key

    def with_(self, **changes):
        """Copy with ``{"section.key": value}`` changes (pass a dict via ``**``)."""
        values = copy.deepcopy(self.values)
        for dotted, value in changes.items():
            section, key = self._split(dotted)
            values[section][key] = value
        return ExperimentConfig(values)

    def validate(self):
        v = self.values
        for kind in v["victims"]["kinds"]:
            if kind not in VICTIM_KINDS:
                raise ConfigError(f"unknown victim kind {kind!r}; expected one of {VICTIM_KINDS}")
        if not v["victims"]["kinds"]:
            raise ConfigError("at least one victim kind is required")
        for method in v["attack"]["methods"]:
            if method not in ATTACK_METHODS and method != "none":
                raise ConfigError(f"unknown attack method {method!r}; expected one of {ATTACK_METHODS}")
        if "none" in v["attack"]["methods"] and len(v["attack"]["methods"]) > 1:
            raise ConfigError("attack method 'none' cannot be combined with other methods")
        if not 0.0 < v["data"]["attacker_fraction"] <= 1.0:
            raise ConfigError("data.attacker_fraction must be in (0, 1]")
        if v["data"]["attacker_level"] not in ("interaction", "user"):
            raise ConfigError("data.attacker_level must be 'interaction' or 'user'")
        if v["attack"]["k"] < 1:
            raise ConfigError("attack.k must be >= 1")
        if v["attack"]["n_targets"] < 1 and not v["attack"]["targets"]:
            raise ConfigError("attack.n_targets must be >= 1")
        if v["eval"]["K"] < 1:
            raise ConfigError("eval.K must be >= 1")
        d = v["diffusion"]
        if d["steps"] < 1:
            raise ConfigError("diffusion.steps must be >= 1 (use attack method 'ae-only' for no diffusion)")
        if not 0.0 < d["beta_min"] <= d["beta_max"] < 1.0:
            raise ConfigError("need 0 < diffusion.beta_min <= diffusion.beta_max < 1")
        if d["layers"] not in (0, 1, 2, 3):
            raise ConfigError("diffusion.layers must be in {0, 1, 2, 3}")

    def attack_methods(self):
        methods = self.values["attack"]["methods"]
        return [] if methods == ["none"] else list(methods)

    def to_dict(self):
        return copy.deepcopy(self.values)

    def hash(self):
        return config_hash(self.values)

    def to_ini(self):
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {}
            for key, value in keys.items():
                if isinstance(value, list):
                    value = ", ".join(str(x) for x in value)
                parser[section][key] = str(value)
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def __repr__(self):
        return f"ExperimentConfig(hash={self.hash()})"


def parse_ini(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if parser.defaults():
        raise ConfigError("keys outside a section are not allowed")
    return {s: dict(parser[s]) for s in parser.sections()}


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(f"{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        section, key = rest.split("__", 1)
        section = section.lower()
        keys = SCHEMA.get(section)
        if keys is None:
            raise ConfigError(f"{name}: unknown section {section!r}")
        match = [k for k in keys if k.lower() == key.lower()]
        if not match:
            raise ConfigError(f"{name}: unknown key {key!r} in section [{section}]")
        out.setdefault(section, {})[match[0]] = value
    return out


def load_config(path=None, environ=None, overrides=None):
    """Read a ``.ini``/``.cfg`` or ``.json`` file, then apply env and explicit overrides."""
    values = {}
    if path is not None:
        with open(path) as fh:
            text = fh.read()
        if str(path).endswith(".json"):
            try:
                values = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        else:
            values = parse_ini(text)
    for extra in (env_overrides(environ), overrides or {}):
        for section, keys in extra.items():
            values.setdefault(section, {}).update(keys)
    return ExperimentConfig(values)
