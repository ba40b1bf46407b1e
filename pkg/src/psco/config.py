"""Training configuration, named presets, and the INI-style config file format.

A config file has sections ``[train]``, ``[model]``, ``[sinkhorn]``, ``[aug]``
and optionally ``[data]`` and ``[eval]``. ``[train] preset = <name>`` selects
the base values; every other key overrides one field. Unknown sections or keys
are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError, UsageError


@dataclass
class SinkhornConfig:
    epsilon: float = 0.025
    max_iters: int = 300
    tol: float = 1e-6
    # ablation: False selects top-K directly on raw similarities
    enabled: bool = True
    marginals: str = "balanced"


@dataclass
class AugmentationPolicy:
    kind: str  # "weak" | "strong"
    input_kind: str = "vector"  # "vector" | "image"
    noise_std: float = 0.0
    mask_rate: float = 0.0
    crop_scale_min: float = 0.2
    flip_prob: float = 0.5
    jitter_strength: float = 0.0
    jitter_prob: float = 0.0
    invert_prob: float = 0.0


@dataclass
class AugConfig:
    input_kind: str = "vector"
    sigma_weak: float = 0.05
    sigma_strong: float = 0.15
    mask_rate: float = 0.2
    crop_scale_min: float = 0.2
    flip_prob: float = 0.5
    jitter_strength: float = 0.4
    jitter_prob: float = 0.8
    invert_prob: float = 0.2

    def weak(self) -> AugmentationPolicy:
        if self.input_kind == "vector":
            return AugmentationPolicy("weak", "vector", noise_std=self.sigma_weak)
        return AugmentationPolicy("weak", "image", crop_scale_min=self.crop_scale_min, flip_prob=self.flip_prob)

    def strong(self) -> AugmentationPolicy:
        if self.input_kind == "vector":
            return AugmentationPolicy("strong", "vector", noise_std=self.sigma_strong, mask_rate=self.mask_rate)
        return AugmentationPolicy(
            "strong", "image",
            crop_scale_min=self.crop_scale_min,
            flip_prob=self.flip_prob,
            jitter_strength=self.jitter_strength,
            jitter_prob=self.jitter_prob,
            invert_prob=self.invert_prob,
        )


@dataclass
class ModelConfig:
    backbone_hidden: tuple = (64, 64)
    proj_hidden: int = 64
    pred_hidden: int = 64
    activation: str = "relu"


@dataclass
class TrainConfig:
    N: int = 64
    K: int = 4
    M: int = 1024
    d: int = 32
    tau_psco: float = 1.0
    tau_moco: float = 0.2
    m: float = 0.99
    lr0: float = 0.03
    weight_decay: float = 5e-4
    sgd_momentum: float = 0.9
    epochs: int = 50
    seed: int = 0
    # ablation: False draws keys from the online network instead of the EMA copy
    use_momentum: bool = True
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> "TrainConfig":
        problems = []
        if self.N < 1 or self.K < 1 or self.M < 1 or self.d < 2:
            problems.append("N, K, M must be >= 1 and d >= 2")
        if self.N > self.M:
            problems.append(f"N={self.N} exceeds queue capacity M={self.M}")
        if self.K > self.M:
            problems.append(f"K={self.K} exceeds queue capacity M={self.M}")
        if not (self.tau_psco > 0 and self.tau_moco > 0):
            problems.append("temperatures must be positive")
        if not 0.0 <= self.m <= 1.0:
            problems.append(f"m={self.m} outside [0, 1]")
        if not self.lr0 > 0:
            problems.append(f"lr0={self.lr0} must be positive")
        if self.weight_decay < 0 or not 0.0 <= self.sgd_momentum < 1.0:
            problems.append("weight_decay must be >= 0 and sgd_momentum in [0, 1)")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if not self.sinkhorn.epsilon > 0 or self.sinkhorn.max_iters < 1:
            problems.append("sinkhorn epsilon must be > 0 and max_iters >= 1")
        if self.sinkhorn.marginals not in ("balanced", "partial"):
            problems.append(f"unknown sinkhorn marginals {self.sinkhorn.marginals!r}")
        if self.aug.input_kind not in ("vector", "image"):
            problems.append(f"unknown input kind {self.aug.input_kind!r}")
        if self.aug.sigma_strong < self.aug.sigma_weak:
            problems.append("strong noise must not be weaker than weak noise")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


def from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    model = dict(d.pop("model", {}))
    if "backbone_hidden" in model:
        model["backbone_hidden"] = tuple(model["backbone_hidden"])
    return TrainConfig(
        sinkhorn=SinkhornConfig(**d.pop("sinkhorn", {})),
        aug=AugConfig(**d.pop("aug", {})),
        model=ModelConfig(**model),
        **d,
    )


def _paper_omniglot() -> TrainConfig:
    # Omniglot uses one policy for both views: crop + flip only
    return TrainConfig(
        N=256, K=1, M=16384, d=128, tau_psco=1.0, tau_moco=0.2, m=0.99, lr0=0.03,
        weight_decay=5e-4, epochs=400,
        aug=AugConfig(input_kind="image", crop_scale_min=0.2, flip_prob=0.5,
                      jitter_strength=0.0, jitter_prob=0.0, invert_prob=0.0),
        model=ModelConfig(backbone_hidden=(64, 64), proj_hidden=2048, pred_hidden=2048),
    )


def _paper_miniimagenet() -> TrainConfig:
    return TrainConfig(
        N=256, K=4, M=16384, d=128, tau_psco=1.0, tau_moco=0.2, m=0.99, lr0=0.03,
        weight_decay=5e-4, epochs=400,
        aug=AugConfig(input_kind="image", crop_scale_min=0.2, flip_prob=0.5,
                      jitter_strength=0.4, jitter_prob=0.1, invert_prob=0.2),
        model=ModelConfig(backbone_hidden=(64, 64), proj_hidden=2048, pred_hidden=2048),
    )


PRESETS = {
    "desk": TrainConfig,
    "paper-omniglot": _paper_omniglot,
    "paper-miniimagenet": _paper_miniimagenet,
}


def preset(name: str) -> TrainConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class EvalSettings:
    dataset: str | None = None
    way: int = 5
    shot: int = 5
    query: int = 15
    episodes: int = 600
    adapt_iters: int = 0
    adapt_lr: float = 0.01
    seed: int = 0


@dataclass
class RunConfig:
    train: TrainConfig
    dataset: str | None = None
    eval: EvalSettings = field(default_factory=EvalSettings)


def _convert(raw: str, current, where: str):
    try:
        if isinstance(current, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if current is None or isinstance(current, str):
            return raw.strip()
    except ValueError:
        raise UsageError(f"{where}: cannot parse {raw!r}") from None
    raise UsageError(f"{where}: unsupported field type")


def _apply(obj, items, section: str, skip=()):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, raw in items:
        if key in skip:
            continue
        if key not in names or dataclasses.is_dataclass(getattr(obj, key)):
            raise UsageError(f"unknown key {key!r} in section [{section}]")
        setattr(obj, key, _convert(raw, getattr(obj, key), f"[{section}] {key}"))


def parse_config_text(text: str, base_dir: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive (N, K, M)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config: {exc}".splitlines()[0]) from None
    allowed = {"train", "model", "sinkhorn", "aug", "data", "eval"}
    unknown = set(parser.sections()) - allowed
    if unknown:
        raise UsageError(f"unknown config section(s): {sorted(unknown)}")

    train_items = dict(parser.items("train")) if parser.has_section("train") else {}
    cfg = preset(train_items.get("preset", "desk"))
    _apply(cfg, train_items.items(), "train", skip=("preset",))
    for name in ("model", "sinkhorn", "aug"):
        if parser.has_section(name):
            _apply(getattr(cfg, name), parser.items(name), name)

    run = RunConfig(cfg)
    if parser.has_section("data"):
        data = dict(parser.items("data"))
        extra = set(data) - {"dataset"}
        if extra:
            raise UsageError(f"unknown key(s) {sorted(extra)} in section [data]")
        run.dataset = _resolve(data.get("dataset"), base_dir)
    if parser.has_section("eval"):
        _apply(run.eval, parser.items("eval"), "eval")
        run.eval.dataset = _resolve(run.eval.dataset, base_dir)
    cfg.validate()
    return run


def _resolve(path, base_dir):
    if path and base_dir and not os.path.isabs(path):
        return os.path.normpath(os.path.join(base_dir, path))
    return path


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, os.path.dirname(os.path.abspath(path)))


def dump_config(run: RunConfig) -> str:
    """Render a RunConfig back to the INI format (every field written out)."""
    cfg = run.train
    lines = ["[train]"]
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if not dataclasses.is_dataclass(v):
            lines.append(f"{f.name} = {v}")
    for name in ("model", "sinkhorn", "aug"):
        lines.append(f"\n[{name}]")
        sub = getattr(cfg, name)
        for f in dataclasses.fields(sub):
            v = getattr(sub, f.name)
            lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
    if run.dataset:
        lines += ["\n[data]", f"dataset = {run.dataset}"]
    lines.append("\n[eval]")
    for f in dataclasses.fields(run.eval):
        v = getattr(run.eval, f.name)
        if v is not None:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
