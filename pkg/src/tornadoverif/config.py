"""Run configuration: one YAML document, dataclass sections, env overrides for paths.

Example::

    projection: {central_meridian: -95.0}
    pipeline: {sigma: 120000.0, refine_factor: 16, radius: 40000.0}
    harness: {quota: 50, max_turns: 100, agent_name: Forecaster}
    scoring: {include_zero_complement: false, absent_as_zero: true}
    paths: {archive: archive, reports: reports.csv, runs: runs, ground_truth: ground_truth}

Relative paths resolve against the config file's directory.  The variables
``TORNADOVERIF_ARCHIVE``, ``TORNADOVERIF_REPORTS``, ``TORNADOVERIF_RUNS`` and
``TORNADOVERIF_GROUND_TRUTH`` override the matching path.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from tornadoverif.errors import ConfigError
from tornadoverif.geometry import DEFAULT_EPS_AREA, Domain
from tornadoverif.geoproj import LambertConfig
from tornadoverif.riskfield import NONZERO_LEVELS, PipelineParams, RegularGrid

SPC_THRESHOLDS = tuple(lv.threshold for lv in NONZERO_LEVELS)
ENV_PREFIX = "TORNADOVERIF_"


@dataclass(frozen=True)
class HarnessSettings:
    quota: int = 50
    max_turns: int = 100
    agent_name: str = "Forecaster"
    image_mode: str = "base64"
    context_limit: int | None = None
    endpoint_timeout: float = 600.0
    prompt_dir: str | None = None


@dataclass(frozen=True)
class ScoringSettings:
    include_zero_complement: bool = False
    absent_as_zero: bool = True
    eps_area: float = DEFAULT_EPS_AREA
    bootstrap_iterations: int = 1000
    bootstrap_seed: int = 0


@dataclass(frozen=True)
class PathSettings:
    archive: str = "archive"
    reports: str = "reports.csv"
    runs: str = "runs"
    ground_truth: str = "ground_truth"


@dataclass(frozen=True)
class RunConfig:
    projection: LambertConfig = field(default_factory=LambertConfig)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    thresholds: tuple = SPC_THRESHOLDS
    harness: HarnessSettings = field(default_factory=HarnessSettings)
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def __post_init__(self):
        p = self.pipeline
        for name, v in (("sigma", p.sigma), ("radius", p.radius), ("refine_factor", p.refine_factor),
                        ("eps_area", self.scoring.eps_area)):
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if tuple(float(t) for t in self.thresholds) != SPC_THRESHOLDS:
            raise ConfigError("thresholds must be the SPC set 0.02, 0.05, 0.10, 0.15, 0.30, 0.45, 0.60")
        h = self.harness
        if h.quota < 0 or h.max_turns < 1:
            raise ConfigError("harness quota must be >= 0 and max_turns >= 1")
        if h.image_mode not in ("base64", "path"):
            raise ConfigError(f"image_mode must be base64 or path, not {h.image_mode!r}")
        if self.scoring.bootstrap_iterations < 1:
            raise ConfigError("bootstrap_iterations must be >= 1")

    # --- derived objects ---

    def grid(self) -> RegularGrid:
        return RegularGrid.grid211(self.projection)

    def domain(self) -> Domain:
        return Domain.from_grid(self.grid().refined(self.pipeline.refine_factor))

    def path(self, name: str) -> Path:
        return Path(getattr(self.paths, name))

    def harness_config(self):
        from tornadoverif.harness import HarnessConfig, PromptSet

        h = self.harness
        prompts = PromptSet.from_dir(h.prompt_dir) if h.prompt_dir else PromptSet.default()
        return HarnessConfig(quota=h.quota, max_turns=h.max_turns, agent_name=h.agent_name,
                             image_mode=h.image_mode, context_limit=h.context_limit,
                             eps_area=self.scoring.eps_area, projection=self.projection, prompts=prompts)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d


_SECTIONS = {"projection": LambertConfig, "pipeline": PipelineParams, "harness": HarnessSettings,
             "scoring": ScoringSettings, "paths": PathSettings}


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"config section '{name}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{name}': {exc}") from exc


def config_from_dict(raw: Mapping | None, base_dir: Path | None = None,
                     env: Mapping[str, str] | None = None) -> RunConfig:
    raw = dict(raw or {})
    unknown = set(raw) - set(_SECTIONS) - {"thresholds"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    parts = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    env = os.environ if env is None else env
    paths = {}
    for f in dataclasses.fields(PathSettings):
        value = env.get(ENV_PREFIX + f.name.upper()) or getattr(parts["paths"], f.name)
        p = Path(value).expanduser()
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        paths[f.name] = str(p)
    parts["paths"] = PathSettings(**paths)
    if raw.get("thresholds") is not None:
        parts["thresholds"] = tuple(raw["thresholds"])
    try:
        return RunConfig(**parts)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, env: Mapping[str, str] | None = None) -> RunConfig:
    """Read ``path`` (or defaults when None); relative paths resolve against its directory."""
    if path is None:
        return config_from_dict({}, Path.cwd(), env)
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is not None and not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, path.resolve().parent, env)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
