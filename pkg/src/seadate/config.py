"""Run configuration: one JSON document covering data, model, loss and training.

Schema (every key optional; omitted keys take the defaults below)::

    {
      "seed": 0,                  # model init and batch order
      "train_count": 200, "test_count": 50,
      "gen": {GenConfig fields},
      "backbone": {BackboneConfig fields},
      "loss": {LossWeights fields},
      "contrastive": {CLConfig fields},
      "train": {TrainConfig fields except seed},
      "eval": {"conf_thresh": 0.01, "nms_iou": 0.5},
      "ablation": {"positions": [1, 2, 3, 4], "single_modality": true}
    }

``SEADATE_SEED`` in the environment overrides both ``seed`` and
``gen.seed``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .contrastive import CLConfig
from .detector.loss import LossWeights
from .detector.model import BackboneConfig
from .detector.train import TrainConfig
from .errors import ConfigError
from .synth import GenConfig

SEED_ENV = "SEADATE_SEED"


@dataclass
class EvalConfig:
    conf_thresh: float = 0.01
    nms_iou: float = 0.5

    def __post_init__(self):
        if not 0 <= self.conf_thresh <= 1:
            raise ConfigError(f"conf_thresh must lie in [0, 1], got {self.conf_thresh}")
        if not 0 <= self.nms_iou <= 1:
            raise ConfigError(f"nms_iou must lie in [0, 1], got {self.nms_iou}")


@dataclass
class AblationConfig:
    positions: tuple = (1, 2, 3, 4)
    single_modality: bool = True    # also train rgb-only and ir-only baselines

    def __post_init__(self):
        self.positions = tuple(int(p) for p in self.positions)
        if not self.positions or any(p not in (1, 2, 3, 4) for p in self.positions):
            raise ConfigError(f"positions must be a nonempty subset of 1..4, got {self.positions}")


SECTIONS = {
    "gen": GenConfig,
    "backbone": BackboneConfig,
    "loss": LossWeights,
    "contrastive": CLConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
}
SCALARS = {"seed": int, "train_count": int, "test_count": int}


@dataclass
class RunConfig:
    seed: int = 0
    train_count: int = 200
    test_count: int = 50
    gen: GenConfig = field(default_factory=GenConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    contrastive: CLConfig = field(default_factory=CLConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.train_count < 1 or self.test_count < 1:
            raise ConfigError("train_count and test_count must be positive")
        if self.backbone.num_classes != self.gen.num_classes:
            raise ConfigError(f"backbone.num_classes ({self.backbone.num_classes}) differs from "
                              f"gen.num_classes ({self.gen.num_classes})")
        if self.backbone.image_size != self.gen.image_size:
            raise ConfigError(f"backbone.image_size ({self.backbone.image_size}) differs from "
                              f"gen.image_size ({self.gen.image_size})")
        if self.backbone.cl and self.contrastive.embed_dim != self.backbone.embed_dim:
            raise ConfigError(f"contrastive.embed_dim ({self.contrastive.embed_dim}) differs from "
                              f"backbone.embed_dim ({self.backbone.embed_dim})")
        # the training seed always follows the run seed
        self.train = replace(self.train, seed=self.seed)

    def to_dict(self):
        d = {k: getattr(self, k) for k in SCALARS}
        for name in SECTIONS:
            sec = asdict(getattr(self, name))
            if name == "train":
                sec.pop("seed")
            d[name] = _jsonable(sec)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _build_section(name, values):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be a JSON object")
    known = {f.name for f in fields(cls)} - ({"seed"} if name == "train" else set())
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown field '{name}.{key}'")
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: invalid value ({exc})") from None


def from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    kwargs = {}
    for key, value in d.items():
        if key in SCALARS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"field '{key}' must be an integer, got {value!r}")
            kwargs[key] = value
        elif key in SECTIONS:
            kwargs[key] = _build_section(key, value)
        else:
            raise ConfigError(f"unknown field '{key}'")
    return RunConfig(**kwargs)


def apply_overrides(d, assignments):
    """Apply ``section.key=value`` strings (values parsed as JSON) to a config dict."""
    d = json.loads(json.dumps(d))
    for item in assignments:
        path, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = d
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r}: '{k}' is not a section")
        node[keys[-1]] = value
    return d


def load_config(path=None, overrides=(), environ=None):
    """Resolve file values, then ``overrides``, then ``SEADATE_SEED``."""
    d = {}
    if path is not None:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    d = apply_overrides(d, overrides)
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV, "").strip():
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        d["seed"] = seed
        if not isinstance(d.setdefault("gen", {}), dict):
            raise ConfigError("section 'gen' must be a JSON object")
        d["gen"]["seed"] = seed
    return from_dict(d)
