"""Experiment configuration: an INI file with one section per stage.

Example::

    [experiment]
    seed = 0
    workdir = run

    [manifold]          ; ManifoldParams fields (seed defaults to the master seed)
    num_classes = 10
    feature_dim = 256

    [data]
    train_objects = 40
    test_objects = 10
    poses_per_object = 12
    pose_mode = uniform
    jitter = 0.8

    [model]
    pose_hidden = 128

    [train]             ; TrainConfig fields
    epochs = 20

    [eval]
    lam = 1.0
    shots = 1
    repetitions = 100
    targets =           ; comma-separated pose values; empty = every cell centroid

Every value is validated on load; errors name the file and line.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError, FattenError
from .evaluation import FewShotConfig, SVMConfig
from .manifold import ManifoldParams
from .training import TrainConfig


@dataclass
class DataConfig:
    train_objects: int = 40
    test_objects: int = 10
    poses_per_object: int = 12
    balance: bool = True
    pose_mode: str = "uniform"
    jitter: float = 0.8

    def __post_init__(self):
        if min(self.train_objects, self.test_objects, self.poses_per_object) < 1:
            raise ConfigError("object and pose counts must be >= 1")
        if self.pose_mode not in ("centroid", "uniform"):
            raise ConfigError(f"pose_mode must be 'centroid' or 'uniform', got {self.pose_mode!r}")
        if not 0.0 <= self.jitter <= 1.0:
            raise ConfigError(f"jitter must lie in [0, 1], got {self.jitter}")


@dataclass
class ModelConfig:
    pose_hidden: int = 128
    appearance_hidden: int = 256
    appearance_dim: int = 64
    decoder_hidden: int = 256

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"{f.name} must be >= 1")


@dataclass
class EvalConfig:
    lam: float = 1.0
    shots: int = 1
    repetitions: int = 100
    targets: Optional[list] = None
    svm_C: float = 1.0
    svm_epochs: int = 200
    svm_lr: float = 0.01
    svm_decay: float = 1.0
    oracle: bool = True
    retrieval_queries: Optional[int] = None

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        self.fewshot(0)  # validates the few-shot and SVM fields

    def fewshot(self, seed):
        return FewShotConfig(
            shots=self.shots, targets=self.targets, repetitions=self.repetitions,
            svm=SVMConfig(C=self.svm_C, epochs=self.svm_epochs, lr=self.svm_lr,
                          decay=self.svm_decay),
            seed=seed, oracle=self.oracle)


@dataclass
class ExperimentConfig:
    seed: int = 0
    workdir: str = "run"
    manifold: ManifoldParams = field(default_factory=ManifoldParams)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def paths(self):
        root = Path(self.workdir)
        return {
            "train": root / "train.fatn",
            "test": root / "test.fatn",
            "pretrained": root / "pretrained.fatc",
            "model": root / "model.fatc",
            "reports": root / "reports",
            "metrics": root / "metrics.jsonl",
        }

    def to_dict(self):
        return asdict(self)


SECTIONS = {
    "manifold": ManifoldParams,
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _parse_scalar(text, typ):
    if typ == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if typ == "int":
        return int(text)
    if typ == "float":
        return float(text)
    if typ == "Sequence[int]":
        return [int(v) for v in text.split(",") if v.strip()]
    if typ == "list":
        return [float(v) for v in text.split(",") if v.strip()]
    return text


def _convert(raw, cls, name):
    """Parse one INI string into the declared type of ``cls.name``."""
    typ = str({f.name: f for f in fields(cls)}[name].type)
    text = raw.strip()
    if typ.startswith("Optional["):
        if text == "" or text.lower() == "none":
            return None
        typ = typ[len("Optional["):-1]
    return _parse_scalar(text, typ)


def _line_index(text):
    """Map (section, key) to its 1-based line number."""
    index = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            index[(section, None)] = lineno
            continue
        m = re.match(r"\s*([^=:;#\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            index[(section, m.group(1).strip())] = lineno
    return index


def parse_config(text, source="<config>"):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)

    def where(section, key=None):
        line = lines.get((section, key)) or lines.get((section, None))
        return f"{source}:{line}" if line else source

    known = {"experiment"} | set(SECTIONS)
    for section in parser.sections():
        if section.lower() not in known:
            raise ConfigError(f"{where(section.lower())}: unknown section [{section}]")

    cfg = ExperimentConfig()
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            try:
                if key == "seed":
                    cfg.seed = int(raw)
                elif key == "workdir":
                    cfg.workdir = raw.strip()
                else:
                    raise ConfigError(f"unknown option {key!r}")
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{where('experiment', key)}: {exc}") from None

    for section, cls in SECTIONS.items():
        values = {}
        if parser.has_section(section):
            names = {f.name for f in fields(cls)}
            for key, raw in parser.items(section):
                if key not in names:
                    raise ConfigError(f"{where(section, key)}: unknown option {key!r} in "
                                      f"[{section}]")
                try:
                    values[key] = _convert(raw, cls, key)
                except ValueError as exc:
                    raise ConfigError(f"{where(section, key)}: bad value for {key}: "
                                      f"{exc}") from None
        if section in ("manifold", "train"):
            values.setdefault("seed", cfg.seed)
        try:
            obj = cls(**values)
            if section == "manifold":
                obj.validate()
        except (FattenError, TypeError, ValueError) as exc:
            bad = next((k for k in values if k in str(exc)), None)
            raise ConfigError(f"{where(section, bad)}: {exc}") from None
        setattr(cfg, section, obj)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def default_config(seed=0, workdir="run"):
    cfg = ExperimentConfig(seed=seed, workdir=workdir)
    cfg.manifold = ManifoldParams(seed=seed)
    cfg.train = TrainConfig(seed=seed)
    return cfg


def model_dims_kwargs(cfg):
    return asdict(cfg.model)

