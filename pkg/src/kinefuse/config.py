"""Run configuration: one JSON document for data generation, fusion and sweeps.

Every section is optional; missing keys take the dataclass defaults. The
shipped ``data/default_config.json`` is the acceptance configuration
(3 training and 2 test sequences of 2000 frames).

Schema (``format: kinefuse-config``, ``version: 1``)::

    skeleton   path to a skeleton JSON, or null for the bundled 16-joint one
    data       n_frames, train_seeds, test_seeds, random_calibration
    noise      NoiseConfig fields (seed is replaced by each sequence seed)
    motion     MotionConfig fields
    fusion     FusionConfig fields
    sweep      theta_grid (radians), subsets {name: [sensor ids]} or null
    backend    "numba", "numpy" or null (environment default)
"""
import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import skeleton as sk
from .errors import ConfigError
from .fusion.ada import FusionConfig
from .metrics import DEFAULT_THETA_GRID
from .synth import MotionConfig, NoiseConfig

CONFIG_FORMAT = "kinefuse-config"
CONFIG_VERSION = 1
BACKENDS = (None, "numba", "numpy")


@dataclass
class DataConfig:
    n_frames: int = 2000
    train_seeds: tuple = (1, 2, 3)
    test_seeds: tuple = (101, 102)
    random_calibration: bool = True

    def __post_init__(self):
        self.train_seeds = tuple(int(s) for s in self.train_seeds)
        self.test_seeds = tuple(int(s) for s in self.test_seeds)
        if self.n_frames < 1:
            raise ConfigError("data.n_frames must be >= 1")


@dataclass
class SweepConfig:
    theta_grid: tuple = DEFAULT_THETA_GRID
    subsets: dict = None

    def __post_init__(self):
        self.theta_grid = tuple(float(t) for t in self.theta_grid)
        if not self.theta_grid:
            raise ConfigError("sweep.theta_grid must not be empty")
        if any(not t >= 0 for t in self.theta_grid):
            raise ConfigError("sweep.theta_grid values must be >= 0")
        if self.subsets is not None:
            self.subsets = {str(k): tuple(int(s) for s in v) for k, v in self.subsets.items()}


@dataclass
class RunConfig:
    skeleton: str = None
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    backend: str = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")

    def load_skeleton(self):
        return sk.load_skeleton(self.skeleton)

    def to_dict(self):
        d = {"format": CONFIG_FORMAT, "version": CONFIG_VERSION, "skeleton": self.skeleton}
        d["data"] = asdict(self.data)
        d["noise"] = asdict(self.noise)
        d["motion"] = asdict(self.motion)
        d["fusion"] = self.fusion.to_dict()
        d["sweep"] = {"theta_grid": list(self.sweep.theta_grid),
                      "subsets": None if self.sweep.subsets is None
                      else {k: list(v) for k, v in self.sweep.subsets.items()}}
        d["backend"] = self.backend
        for section in ("data",):
            d[section] = {k: list(v) if isinstance(v, tuple) else v for k, v in d[section].items()}
        return d


_SECTIONS = {"data": DataConfig, "noise": NoiseConfig, "motion": MotionConfig,
             "fusion": FusionConfig, "sweep": SweepConfig}


def _build(cls, section, values):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in {section!r}: {exc}") from exc


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
        raise ConfigError(f"not a kinefuse config (format={doc.get('format')!r})")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {doc.get('version')!r}")
    unknown = sorted(set(doc) - {"format", "version", "skeleton", "backend", *_SECTIONS})
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    parts = {name: _build(cls, name, doc.get(name)) for name, cls in _SECTIONS.items()}
    return RunConfig(skeleton=doc.get("skeleton"), backend=doc.get("backend"), **parts)


def load_config(path=None):
    """Read a config file; ``None`` loads the shipped default."""
    try:
        if path is None:
            text = resources.files("kinefuse.data").joinpath("default_config.json").read_text()
        else:
            text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path or 'default'} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(cfg, overrides):
    """Copy of ``cfg`` with dotted-key overrides applied, e.g. ``{"fusion.theta_t": 0.3}``.

    Values are validated by rebuilding the affected section.
    """
    doc = copy.deepcopy(cfg.to_dict())
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        target = doc
        for p in parts[:-1]:
            if not isinstance(target.get(p), dict):
                raise ConfigError(f"unknown config key {key!r}")
            target = target[p]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key {key!r}")
        target[parts[-1]] = value
    return config_from_dict(doc)


def parse_theta(text):
    """Threshold from text: a float in radians, or ``inf``."""
    value = float(text)
    if math.isnan(value) or value < 0:
        raise ConfigError(f"theta must be >= 0 (radians), got {text!r}")
    return value
