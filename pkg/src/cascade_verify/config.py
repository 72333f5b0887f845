"""Layered key-value configuration: defaults -> profile -> user file -> --set overrides."""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .cascade import CascadeConfig
from .errors import ConfigInvalid, SpecInvalid
from .evaluation import EvalConfig
from .frontend import FrontendConfig
from .hmm import TrainConfig
from .synth import EmotionStyle, SynthSpec

PROFILES = ("defaults", "micro", "benchmark", "paper-shaped")
SECTIONS = {
    "frontend": FrontendConfig,
    "training": TrainConfig,
    "cascade": CascadeConfig,
    "evaluation": EvalConfig,
    "synth": SynthSpec,
}
# keys that are derived from [run] or are not plain scalars
_SKIP = {("training", "init_seed"), ("synth", "rng_seed"), ("synth", "styles"), ("evaluation", "cascade")}


@dataclass
class RunConfig:
    profile: str = "defaults"
    seed: int = 0
    jobs: int = 1
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def dump(self) -> str:
        """The fully resolved configuration as INI text (what gets echoed to output dirs)."""
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {"profile": self.profile, "seed": str(self.seed), "jobs": str(self.jobs)}
        for name in SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                        if (name, f.name) not in _SKIP}
        cp["styles"] = {e: ",".join(repr(float(v)) for v in dataclasses.astuple(st))
                        for e, st in self.synth.styles.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def echo(self, out_dir) -> Path:
        path = Path(out_dir) / "config.used"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump())
        return path


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            # speaker counts may be given per gender as "male,female"
            if "," in raw:
                return tuple(int(x) for x in raw.split(","))
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (tuple, list)):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigInvalid(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _styles(section, base) -> dict:
    """Emotion styles from ``emotion = f0_scale, rate_scale, breathiness, bandwidth_scale, level_db,
    variability[, expressiveness]`` lines layered over ``base``."""
    styles = dict(base)
    n_fields = len(dataclasses.fields(EmotionStyle))
    for emotion, raw in section.items():
        try:
            values = [float(x) for x in raw.split(",")]
        except ValueError:
            raise ConfigInvalid(f"styles.{emotion}: expected comma-separated numbers, got {raw!r}") from None
        if len(values) not in (n_fields - 1, n_fields):
            raise ConfigInvalid(f"styles.{emotion}: expected {n_fields - 1} or {n_fields} values, got {len(values)}")
        styles[emotion] = EmotionStyle(*values)
    return styles


def _profile_text(name: str) -> str:
    if name not in PROFILES:
        raise ConfigInvalid(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    return resources.files("cascade_verify.profiles").joinpath(f"{name}.ini").read_text()


def load_config(profile: str = "defaults", config_file=None, overrides=(), seed=None, jobs=None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(_profile_text("defaults"))
    if profile != "defaults":
        cp.read_string(_profile_text(profile))
    if config_file is not None:
        if not Path(config_file).exists():
            raise ConfigInvalid(f"config file {config_file} not found")
        cp.read(config_file)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigInvalid(f"override {item!r} is not of the form section.key=value")
        if not cp.has_section(section):
            raise ConfigInvalid(f"unknown config section {section!r}")
        cp[section][name] = value

    cfg = RunConfig(profile=profile)
    cfg.seed = int(cp.get("run", "seed", fallback="0")) if seed is None else int(seed)
    try:
        cfg.jobs = int(cp.get("run", "jobs", fallback="0")) if jobs is None else int(jobs)
    except ValueError:
        raise ConfigInvalid("run.jobs must be an integer") from None
    if cfg.jobs < 0:
        raise ConfigInvalid("jobs must be >= 0 (0 = all available cores)")
    if cfg.jobs == 0:
        cfg.jobs = os.cpu_count() or 1
    for name, cls in SECTIONS.items():
        obj = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(obj)}
        values = {}
        for key, raw in cp[name].items() if cp.has_section(name) else ():
            if key not in known or (name, key) in _SKIP:
                raise ConfigInvalid(f"unknown key {name}.{key}")
            values[key] = _coerce(raw, getattr(obj, key), f"{name}.{key}")
        setattr(cfg, name, dataclasses.replace(obj, **values))
    if cp.has_section("styles"):
        cfg.synth = dataclasses.replace(cfg.synth, styles=_styles(cp["styles"], cfg.synth.styles))
    unknown = set(cp.sections()) - set(SECTIONS) - {"run", "styles"}
    if unknown:
        raise ConfigInvalid(f"unknown config sections {sorted(unknown)}")

    # one seed drives every random choice in the pipeline
    cfg.training = dataclasses.replace(cfg.training, init_seed=cfg.seed)
    cfg.synth = dataclasses.replace(cfg.synth, rng_seed=cfg.seed)
    cfg.evaluation = dataclasses.replace(cfg.evaluation, cascade=cfg.cascade)
    try:
        cfg.frontend.validate()
        cfg.training.validate()
        cfg.cascade.validate()
        cfg.synth.validate()
    except (ValueError, SpecInvalid) as exc:
        raise ConfigInvalid(str(exc)) from None
    return cfg
