"""Experiment configuration: an INI file with one section per pipeline stage.

Every key has a default, so an empty file is a valid config. Unknown
sections or keys, unparsable values and out-of-range numbers raise
:class:`ConfigError` naming ``section.key``. :func:`dumps_config` writes the
canonical form (all keys, fixed order), and parsing it back gives an equal
config. The only environment override is ``DRCORL_SEED``.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

SEED_ENV = "DRCORL_SEED"


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _check(check, message):
    return {"check": check, "message": message}


POSITIVE = _check(lambda v: v > 0, "must be > 0")
NON_NEGATIVE = _check(lambda v: v >= 0, "must be >= 0")
UNIT = _check(lambda v: 0 <= v <= 1, "must lie in [0, 1]")
OPEN_UNIT = _check(lambda v: 0 < v < 1, "must lie in (0, 1)")
HALF_OPEN_UNIT = _check(lambda v: 0 < v <= 1, "must lie in (0, 1]")
WIDTHS = _check(lambda v: all(w > 0 for w in v), "layer widths must be > 0")


def _choice(*options):
    return _check(lambda v: v in options, f"must be one of {', '.join(options)}")


def _f(default, rule=None):
    return field(default=default, metadata=rule or {})


@dataclass
class ExperimentSection:
    seed: int = _f(0, NON_NEGATIVE)
    env: str = "point_mass"
    out_dir: str = "runs/default"


@dataclass
class EnvSection:
    horizon: int = _f(200, POSITIVE)
    cost_limit: float = _f(10.0, NON_NEGATIVE)
    cost_eps: float = _f(0.1, POSITIVE)


@dataclass
class DataSection:
    episodes: int = _f(60, POSITIVE)
    behavior_epsilon: float = _f(0.2, UNIT)
    behavior_noise: float = _f(0.2, NON_NEGATIVE)
    safe_ratio: float = _f(0.5, UNIT)


@dataclass
class DiffusionSection:
    schedule: str = _f("linear", _choice("constant", "sqrt", "linear"))
    timesteps: int = _f(20, POSITIVE)
    hidden: tuple = _f((64, 64), WIDTHS)
    train_steps: int = _f(5000, NON_NEGATIVE)
    batch_size: int = _f(256, POSITIVE)
    lr: float = _f(1e-3, POSITIVE)
    score_t: int = _f(1, POSITIVE)


@dataclass
class CriticsSection:
    gamma: float = _f(0.99, OPEN_UNIT)
    expectile_tau: float = _f(0.7, UNIT)
    soft_update_tau: float = _f(0.005, HALF_OPEN_UNIT)
    ensemble_size: int = _f(4, _check(lambda v: v >= 2, "must be >= 2"))
    ucb_k: float = _f(2.0, NON_NEGATIVE)
    alpha: float = _f(0.2, NON_NEGATIVE)
    lr: float = _f(6e-4, POSITIVE)
    batch_size: int = _f(256, POSITIVE)
    hidden: tuple = _f((64, 64), WIDTHS)
    pretrain_steps: int = _f(2000, NON_NEGATIVE)


@dataclass
class TrainSection:
    steps: int = _f(2000, POSITIVE)
    batch_size: int = _f(256, POSITIVE)
    lr: float = _f(6e-4, NON_NEGATIVE)
    lr_final: float = _f(1.0, UNIT)
    hidden: tuple = _f((64, 64), WIDTHS)
    sigma: float = _f(0.2, POSITIVE)
    state_dependent_std: bool = False
    h_plus: float = _f(0.2, NON_NEGATIVE)
    h_minus: float = _f(0.2, NON_NEGATIVE)
    slack_decay: bool = True
    beta_schedule: str = _f("linear", _choice("constant", "linear", "sqrt"))
    beta_start: float = _f(0.04, POSITIVE)
    beta_end: float = _f(1.0, POSITIVE)
    critic_updates: int = _f(1, POSITIVE)
    eval_every: int = _f(500, NON_NEGATIVE)
    eval_episodes: int = _f(5, POSITIVE)
    pretrain_inline: bool = False
    bc_only: bool = False
    normalize_states: bool = True


@dataclass
class EvalSection:
    episodes: int = _f(20, POSITIVE)
    deterministic: bool = True


@dataclass
class TheoremSection:
    horizons: tuple = _f((50, 200, 800), WIDTHS)
    eta_scale: float = _f(3.0, POSITIVE)
    step_rule: str = _f("sqrt", _choice("sqrt", "constant"))
    h_plus: float = _f(0.05, NON_NEGATIVE)
    h_minus: float = _f(0.05, NON_NEGATIVE)
    auto_slack: bool = False
    eps_dist: float = _f(0.0, NON_NEGATIVE)


SECTIONS = {
    "experiment": ExperimentSection,
    "env": EnvSection,
    "data": DataSection,
    "diffusion": DiffusionSection,
    "critics": CriticsSection,
    "train": TrainSection,
    "eval": EvalSection,
    "theorem": TheoremSection,
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    env: EnvSection = field(default_factory=EnvSection)
    data: DataSection = field(default_factory=DataSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    critics: CriticsSection = field(default_factory=CriticsSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    theorem: TheoremSection = field(default_factory=TheoremSection)

    @property
    def seed(self):
        return self.experiment.seed

    @property
    def is_tabular(self):
        return self.experiment.env != "point_mass"

    def replace(self, section, **changes):
        """Copy with some keys of one section changed (validated)."""
        new = dataclasses.replace(self, **{section: dataclasses.replace(
            getattr(self, section), **changes)})
        validate(new)
        return new


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None
    return text


def validate(cfg: ExperimentConfig, check_files=False):
    for name in SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            rule = f.metadata
            value = getattr(section, f.name)
            if rule and not rule["check"](value):
                raise ConfigError(f"{name}.{f.name}", f"{rule['message']}, got {value!r}")
    if cfg.theorem.horizons != tuple(sorted(set(cfg.theorem.horizons))):
        raise ConfigError("theorem.horizons", "must be strictly increasing")
    if cfg.diffusion.score_t > cfg.diffusion.timesteps:
        raise ConfigError("diffusion.score_t", "must not exceed diffusion.timesteps")
    if check_files and cfg.is_tabular and not Path(cfg.experiment.env).is_file():
        raise ConfigError("experiment.env", f"file not found: {cfg.experiment.env}")
    return cfg


def loads_config(text, apply_env=True, check_files=False):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    cfg = ExperimentConfig()
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section")
        section = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"{name}.{key}", "unknown key")
            setattr(section, key, _parse(f"{name}.{key}", raw, known[key].default))
    if apply_env and os.environ.get(SEED_ENV, "").strip():
        cfg.experiment.seed = _parse(f"{SEED_ENV} (experiment.seed)",
                                     os.environ[SEED_ENV], 0)
    return validate(cfg, check_files)


def dumps_config(cfg: ExperimentConfig):
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path, apply_env=True, check_files=True):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"file not found: {path}")
    return loads_config(path.read_text(), apply_env, check_files)


def save_config(cfg, path):
    Path(path).write_text(dumps_config(cfg))


def toy_config(**experiment):
    """Desk-scale settings for the point-mass pipeline (see README)."""
    cfg = ExperimentConfig()
    cfg.critics = dataclasses.replace(cfg.critics, soft_update_tau=0.5, alpha=0.02, lr=3e-3,
                                      hidden=(32, 32), pretrain_steps=2000)
    cfg.train = dataclasses.replace(cfg.train, steps=3000, lr=3e-4, lr_final=0.05, hidden=(32, 32),
                                    critic_updates=3, eval_every=1000)
    cfg.experiment = dataclasses.replace(cfg.experiment, **experiment)
    return validate(cfg)
