"""Run configuration: a line-oriented ``key = value`` file with dotted keys.

Example::

    # toy run
    phantom.misalign_shift_max = 2
    train.lr0 = 1e-3
    preprocess.augment.hflip_prob = 0.5

Every key must name an existing field; values are parsed according to the
type of the field's default.  ``write_effective`` renders the merged config
in the same syntax, so its output parses back to an identical config.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError, MalformedValueError, UnknownKeyError
from .model import ModelConfig
from .phantom import PhantomConfig
from .preprocess import PreprocessConfig
from .train import TrainConfig

VARIANTS = ("full", "corr_only", "baseline", "attention_only", "corr_local", "corr_non_local")


class MissingConfigError(ConfigError):
    """The config file does not exist or cannot be read."""


@dataclass
class ModelSection:
    variant: str = "full"
    k: int = 3
    n_hybrid: int = 1
    seed: int = 0


@dataclass
class DataSection:
    n_cases: int = 40
    val_fraction: float = 0.2


@dataclass
class PathSection:
    data_dir: str = "data"
    run_dir: str = "run"
    checkpoint: str = ""  # empty means <run_dir>/final.ckpt


@dataclass
class RunConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    preprocess: PreprocessConfig = field(default_factory=lambda: PreprocessConfig(target_size=64))
    data: DataSection = field(default_factory=DataSection)
    paths: PathSection = field(default_factory=PathSection)

    def model_config(self):
        if self.model.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {', '.join(VARIANTS)}, got {self.model.variant!r}")
        return ModelConfig.variant(self.model.variant, backbone=self.backbone, k=self.model.k,
                                   n_hybrid=self.model.n_hybrid, seed=self.model.seed)

    def checkpoint_path(self):
        return Path(self.paths.checkpoint) if self.paths.checkpoint else Path(self.paths.run_dir) / "final.ckpt"


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_scalar(kind, text):
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_value(default, text):
    """Parse ``text`` into the type of ``default``."""
    text = text.strip()
    if isinstance(default, list):
        body = text[1:-1] if text.startswith("[") and text.endswith("]") else text
        items = [t.strip() for t in body.split(",") if t.strip()]
        kind = type(default[0]) if default else float
        return [_parse_scalar(float if kind is float else kind, t) for t in items]
    if isinstance(default, str):
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
            text = text[1:-1]
        return text
    return _parse_scalar(type(default), text)


def _format(value):
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _resolve(cfg, key, line=None):
    """Return (owner dataclass, field name) for a dotted key."""
    parts = key.split(".")
    obj = cfg
    for i, part in enumerate(parts):
        names = {f.name for f in dataclasses.fields(obj)} if dataclasses.is_dataclass(obj) else set()
        if part not in names:
            raise UnknownKeyError(f"unknown key {key!r}", line)
        if i == len(parts) - 1:
            if dataclasses.is_dataclass(getattr(obj, part)):
                raise UnknownKeyError(f"{key!r} is a section, not a key", line)
            return obj, part
        obj = getattr(obj, part)
    raise UnknownKeyError(f"unknown key {key!r}", line)


def set_key(cfg, key, text, line=None):
    owner, name = _resolve(cfg, key.strip(), line)
    try:
        setattr(owner, name, parse_value(getattr(owner, name), text))
    except ValueError as exc:
        raise MalformedValueError(f"bad value for {key.strip()}: {exc}", line) from exc


def parse_text(text, cfg=None):
    cfg = cfg or RunConfig()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedValueError(f"expected 'key = value', got {raw.strip()!r}", n)
        key, value = line.split("=", 1)
        if not key.strip():
            raise MalformedValueError("missing key before '='", n)
        set_key(cfg, key, value, n)
    return cfg


def parse_config(path=None, overrides=()):
    """Defaults, then the file (if any), then ``--set key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError as exc:
            raise MissingConfigError(f"config file not found: {path}") from exc
        except OSError as exc:
            raise MissingConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        parse_text(text, cfg)
    for item in overrides:
        if "=" not in item:
            raise MalformedValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_key(cfg, key, value)
    return cfg


def _items(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _items(value, f"{prefix}{f.name}.")
        else:
            yield prefix + f.name, value


def render(cfg):
    return "".join(f"{k} = {_format(v)}\n" for k, v in _items(cfg))


def write_effective(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(cfg))
    return path


def thread_count(environ=None):
    """Worker cap from ``DCHA_THREADS``; defaults to the logical core count."""
    environ = os.environ if environ is None else environ
    raw = environ.get("DCHA_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"DCHA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"DCHA_THREADS must be a positive integer, got {raw!r}")
    return n
