"""Experiment configuration.

One TOML file with a top-level ``seed`` and the sections below.  Every key
is documented on its dataclass field; unknown keys and sections are errors.
``TYCHEKIT_SEED`` in the environment overrides ``seed``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli

from ..model import ModelConfig

SEED_ENV = "TYCHEKIT_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    size: int = 32  # square image side, power of two
    n_blob_examples: int = 640  # multi-rater blob pool size (0 disables)
    n_shape_tasks: int = 0  # number of single-rater shape tasks
    n_shape_examples: int = 64  # examples per shape task
    fractions: list = field(default_factory=lambda: [0.8, 0.1, 0.1])  # dev/val/test
    n_raters: int = 4
    disk_radius_range: list = field(default_factory=lambda: [0.15, 0.3])
    deform_scale: float = -1.0  # pixels; negative -> 8 px at 128 px, scaled
    deform_smoothness: float = -1.0  # pixels; negative -> 8 px at 128 px, scaled
    pixel_noise_std: float = 0.05


@dataclass
class ModelSection:
    depth: int = 3
    features: int = 16
    kernel_size: int = 3
    slope: float = 0.01
    noise_channels: int = 1
    context_from_cross: bool = True
    symmetric_decoder: bool = False


@dataclass
class TrainConfig:
    lr: float = 1e-4  # Adam learning rate, betas (0.9, 0.999)
    batch_episodes: int = 4
    context_size: int = 16
    k_train: int = 8
    epochs: int = 30
    episodes_per_epoch: int = 0  # 0 -> one pass over all dev examples
    augment_in_task: str = "none"  # per-image family
    augment_task: str = "none"  # per-episode family
    noise: str = "random"  # random | constant | zero
    patience: int = 0  # early stopping on val best-candidate Dice; 0 disables
    val_episodes: int = 16  # val targets scored per epoch when patience > 0


@dataclass
class LossConfig:
    kind: str = "best_candidate"  # best_candidate | ged2 | plain
    w_dice: float = 1.0
    w_ce: float = 1.0


@dataclass
class EvalConfig:
    split: str = "test"
    mode: str = "tyche"  # tyche | ictta
    context_size: int = 16
    k: int = 8
    n_context_draws: int = 5
    noise: str = "random"
    metrics: list = field(
        default_factory=lambda: [
            "dice", "best_candidate_dice", "ged2", "sample_diversity", "hungarian_dice",
        ]
    )
    threshold: float = 0.5
    max_episodes: int = 0  # 0 -> every target in the split


@dataclass
class ICTTASection:
    k: int = 8
    family: str = "ictta"
    include_identity: bool = True
    per_image: bool = False


@dataclass
class StudySection:
    kind: str = "k_sweep"  # k_sweep | context_sweep | noise_ablation | ictta_family_ablation
    grid: list = field(default_factory=list)  # empty -> the kind's default grid
    k_mode: str = "prefix"  # prefix | independent (k_sweep only)


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ictta: ICTTASection = field(default_factory=ICTTASection)
    study: StudySection = field(default_factory=StudySection)

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            depth=m.depth,
            features=m.features,
            kernel_size=m.kernel_size,
            slope=m.slope,
            k_train=self.train.k_train,
            input_size=(self.data.size, self.data.size),
            noise_channels=m.noise_channels,
            context_from_cross=m.context_from_cross,
            symmetric_decoder=m.symmetric_decoder,
            init_seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self, sections=None) -> str:
        d = self.to_dict()
        if sections is not None:
            d = {k: d[k] for k in ["seed", *sections]}
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def validate(self) -> None:
        t, e = self.train, self.eval
        if self.loss.kind not in {"best_candidate", "ged2", "plain"}:
            raise ConfigError(f"loss.kind must be best_candidate, ged2 or plain, got {self.loss.kind!r}")
        if t.lr <= 0 or t.batch_episodes < 1 or t.k_train < 1 or t.epochs < 0:
            raise ConfigError("train.lr, batch_episodes, k_train must be positive, epochs >= 0")
        if t.context_size < 1 or e.context_size < 1:
            raise ConfigError("context sizes must be >= 1")
        if e.n_context_draws < 1 or e.k < 1:
            raise ConfigError("eval.n_context_draws and eval.k must be >= 1")
        if e.mode not in {"tyche", "ictta"}:
            raise ConfigError(f"eval.mode must be tyche or ictta, got {e.mode!r}")
        for noise in (t.noise, e.noise):
            if noise not in {"random", "constant", "zero"}:
                raise ConfigError(f"noise mode must be random, constant or zero, got {noise!r}")
        if self.loss.kind == "ged2" and t.k_train < 2:
            raise ConfigError("loss.kind = ged2 needs train.k_train >= 2")
        self.model_config()


def _fill(cls, values: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    return cls(**values)


_SECTIONS = {
    "data": DataConfig,
    "model": ModelSection,
    "train": TrainConfig,
    "loss": LossConfig,
    "eval": EvalConfig,
    "ictta": ICTTASection,
    "study": StudySection,
}


def config_from_dict(d: dict, env=None) -> ExperimentConfig:
    d = dict(d)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = d.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        kwargs[name] = _fill(cls, section, name)
    seed = d.pop("seed", 0)
    if d:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(d))}")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    cfg = ExperimentConfig(seed=int(seed), **kwargs)
    cfg.validate()
    return cfg


def load_config(path=None, env=None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({}, env)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, env)


def dump_toml(cfg: ExperimentConfig) -> str:
    """Render a config back to TOML (flat sections, scalar and list values)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    d = cfg.to_dict()
    lines = [f"seed = {d.pop('seed')}"]
    for name, section in d.items():
        lines.append("")
        lines.append(f"[{name}]")
        for key, val in section.items():
            lines.append(f"{key} = {fmt(val)}")
    return "\n".join(lines) + "\n"
