"""Scenario configuration: typed dataclasses with YAML load/dump.

A scenario bundles everything that describes the road and the controllers;
run-level knobs (demand rate, duration, seed) stay out of it so one scenario
file can back a whole sweep.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field
from typing import Any

import yaml

from .dynamics import FollowingParams, KinematicLimits, SafetyParams
from .errors import ConfigError
from .interpreter import PlannerParams
from .mcts import SearchParams
from .road import CellGrid, build_grid
from .trajectories import build_trajectory_set


@dataclass(frozen=True, slots=True)
class GeometryConfig:
    """Road layout. work_zone is (lane, first_cell, last_cell) or None."""

    lane_count: int = 3
    cells_per_lane: int = 48
    cell_length: float = 5.0
    work_zone: tuple[int, int, int] | None = (0, 30, 39)
    maneuver_cells: int = 3
    lane_width: float = 3.5

    def build(self) -> CellGrid:
        return build_grid(lane_count=self.lane_count,
                          cells_per_lane=self.cells_per_lane,
                          cell_length=self.cell_length,
                          work_zone=self.work_zone)


@dataclass(frozen=True, slots=True)
class SimulationParams:
    """Stepping and replanning cadence for closed-loop runs."""

    dt: float = 0.1
    replan_interval: float = 1.0
    replan_on_events_only: bool = True
    max_planned: int = 24
    entry_margin: float = 1.0
    queue_limit: int = 1000

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.replan_interval < self.dt:
            raise ConfigError("need 0 < dt <= replan_interval")
        if self.max_planned < 1:
            raise ConfigError("max_planned must be at least 1")


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    limits: KinematicLimits = field(default_factory=KinematicLimits)
    safety: SafetyParams = field(default_factory=SafetyParams)
    following: FollowingParams = field(default_factory=FollowingParams)
    search: SearchParams = field(default_factory=SearchParams)
    sim: SimulationParams = field(default_factory=SimulationParams)
    velocity_grid_step: float = 1.0
    defer_penalty: float = 60.0

    def grid(self) -> CellGrid:
        return self.geometry.build()

    def planner_params(self, grid: CellGrid | None = None) -> PlannerParams:
        grid = grid if grid is not None else self.grid()
        tset = build_trajectory_set(self.limits, grid,
                                    self.velocity_grid_step,
                                    maneuver_cells=self.geometry.maneuver_cells,
                                    lane_width=self.geometry.lane_width)
        return PlannerParams(limits=self.limits, safety=self.safety,
                             trajectory_set=tset,
                             maneuver_cells=self.geometry.maneuver_cells,
                             defer_penalty=self.defer_penalty)


_SECTIONS: dict[str, type] = {
    "geometry": GeometryConfig,
    "limits": KinematicLimits,
    "safety": SafetyParams,
    "following": FollowingParams,
    "search": SearchParams,
    "sim": SimulationParams,
}
_SCALARS = ("velocity_grid_step", "defer_penalty")


def _coerce(cls: type, section: str, raw: dict[str, Any]):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown field(s) in {section!r}: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if section == "geometry" and key == "work_zone" and value is not None:
            if not (isinstance(value, (list, tuple)) and len(value) == 3):
                raise ConfigError("geometry.work_zone must be [lane, first, last] or null")
            value = tuple(int(x) for x in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in section {section!r}: {exc}") from exc


def scenario_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping at the top level")
    unknown = sorted(set(data) - set(_SECTIONS) - set(_SCALARS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _coerce(cls, name, data[name])
    for name in _SCALARS:
        if name in data:
            kwargs[name] = float(data[name])
    return ScenarioConfig(**kwargs)


def scenario_to_dict(scenario: ScenarioConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name in _SECTIONS:
        section = getattr(scenario, name)
        fields = {}
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = list(value)
            fields[f.name] = value
        out[name] = fields
    for name in _SCALARS:
        out[name] = getattr(scenario, name)
    return out


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    return scenario_from_dict(data)


def dump_scenario(scenario: ScenarioConfig, path: str | None = None) -> str:
    buf = io.StringIO()
    yaml.safe_dump(scenario_to_dict(scenario), buf,
                   default_flow_style=False, sort_keys=True)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
