"""Benchmark configuration: TOML loading with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .vlm import EndpointConfig


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkSection:
    levels: tuple[int, ...] = (1, 2, 3)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    trials: int = 25
    perturbation_pos: float = 0.03
    perturbation_rot: float = 0.1
    cloud_density: float = 500.0
    min_object_points: int = 80
    cloud_noise_sigma: float = 0.0
    tolerance_pos: float = 0.02
    tolerance_rot: float = 0.2

    def __post_init__(self) -> None:
        if any(level not in (1, 2, 3) for level in self.levels):
            raise ConfigInvalid(f"levels must be within 1..3, got {self.levels}")
        if self.trials < 1:
            raise ConfigInvalid("trials must be at least 1")
        if self.cloud_density <= 0:
            raise ConfigInvalid("cloud_density must be positive")


@dataclass(frozen=True)
class PipelineSection:
    mode: str = "oracle"
    temperature: float = 0.05
    match_threshold: float = 0.02
    epsilon: float = 0.01
    stride: int = 5
    v_zero_threshold: float = 1e-3
    routing_enabled: bool = True
    gripper_weight: float = 1.0
    knn_k: int = 12
    attach_tolerance: float = 0.04
    annotation_pairs: int = 3
    normalize_descriptors: bool = True
    class_weight: float = 4.0

    def __post_init__(self) -> None:
        if self.mode not in ("oracle", "descriptor", "random"):
            raise ConfigInvalid(f"pipeline mode must be oracle, descriptor or "
                                f"random, got {self.mode!r}")
        if self.temperature <= 0 or not 0 < self.match_threshold < 1:
            raise ConfigInvalid("temperature must be positive and "
                                "match_threshold in (0, 1)")
        if self.stride < 1:
            raise ConfigInvalid("stride must be at least 1")


@dataclass(frozen=True)
class PlannerSection:
    step_size: float = 0.05
    max_iterations: int = 20000
    goal_bias: float = 0.1
    rotation_weight: float = 0.1
    angular_step: float = 0.3

    def __post_init__(self) -> None:
        if self.step_size <= 0 or not 0 < self.goal_bias < 1:
            raise ConfigInvalid("step_size must be positive and goal_bias in (0, 1)")


@dataclass(frozen=True)
class VlmSection:
    url: str = ""
    model: str = "gpt-4o"
    credential_env: str = "VLM_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 3
    temperature: float = 0.0

    def endpoint_config(self) -> EndpointConfig:
        return EndpointConfig(url=self.url, model=self.model,
                              credential_env=self.credential_env,
                              timeout_s=self.timeout_s,
                              max_retries=self.max_retries,
                              temperature=self.temperature)


@dataclass(frozen=True)
class BenchmarkConfig:
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    vlm: VlmSection = field(default_factory=VlmSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "benchmark": BenchmarkSection,
    "pipeline": PipelineSection,
    "planner": PlannerSection,
    "vlm": VlmSection,
}


def _build_section(cls, data: dict, name: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigInvalid(f"unknown keys in [{name}]: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid(f"bad value in [{name}]: {exc}") from exc


def load_config(path: Optional[str] = None) -> BenchmarkConfig:
    """Load a TOML config; missing file path means all defaults."""
    if path is None:
        return BenchmarkConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid TOML: {exc}") from exc

    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = data.get(name, {})
        if not isinstance(body, dict):
            raise ConfigInvalid(f"[{name}] must be a table")
        sections[name] = _build_section(cls, body, name)
    return BenchmarkConfig(**sections)
