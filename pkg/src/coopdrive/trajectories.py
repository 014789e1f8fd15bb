"""Pre-designed lane-change trajectories and their per-cell timing.

A maneuver is described by fixed per-cell traversal durations plus a
fifth-order lateral path with zero lateral velocity and acceleration at
both ends.  Durations are independent of surrounding traffic, which is
what lets the scheduler treat a lane change as a rigid template: pick a
template, pick a start time, and every cell arrival follows by recurrence.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from functools import cached_property

from .dynamics import KinematicLimits
from .errors import ConfigError
from .road import CellGrid


@dataclass(frozen=True)
class LaneChangeTrajectory:
    """One maneuver template.

    ``durations[i]`` is the time spent in the i-th maneuver cell; the
    lateral offset runs 0 -> lane_width over the whole maneuver following
    the quintic scaled by ``lateral_coeffs`` (coefficients of the
    normalized-time polynomial, constant term first).
    """

    initial_velocity: float
    final_velocity: float
    durations: tuple[float, ...]
    cell_length: float
    lane_width: float

    def __post_init__(self) -> None:
        if not self.durations or any(d <= 0.0 for d in self.durations):
            raise ConfigError("maneuver durations must be positive")
        if self.cell_length <= 0.0 or self.lane_width <= 0.0:
            raise ConfigError("cell_length and lane_width must be positive")

    @cached_property
    def total_duration(self) -> float:
        return sum(self.durations)

    @cached_property
    def lateral_coeffs(self) -> tuple[float, ...]:
        w = self.lane_width
        return (0.0, 0.0, 0.0, 10.0 * w, -15.0 * w, 6.0 * w)

    def lateral_offset(self, elapsed: float) -> float:
        """Unsigned lateral displacement from the origin lane center."""
        sigma = min(max(elapsed / self.total_duration, 0.0), 1.0)
        acc = 0.0
        for c in reversed(self.lateral_coeffs):
            acc = acc * sigma + c
        return acc

    def longitudinal_offset(self, elapsed: float) -> float:
        """Distance covered since the maneuver started (piecewise linear,
        one linear piece per cell)."""
        if elapsed <= 0.0:
            return 0.0
        covered = 0.0
        remaining = elapsed
        for d in self.durations:
            if remaining < d:
                return covered + self.cell_length * (remaining / d)
            covered += self.cell_length
            remaining -= d
        return covered  # maneuver finished

    def velocity_at(self, elapsed: float) -> float:
        """Longitudinal speed while the maneuver runs; final velocity after."""
        if elapsed < 0.0:
            return self.initial_velocity
        remaining = elapsed
        for d in self.durations:
            if remaining < d:
                return self.cell_length / d
            remaining -= d
        return self.final_velocity


class TrajectorySet:
    """Templates indexed by design velocity, nearest-match lookup."""

    __slots__ = ("velocities", "_by_velocity")

    def __init__(self, trajectories: dict[float, LaneChangeTrajectory]):
        if not trajectories:
            raise ConfigError("trajectory set may not be empty")
        self.velocities: tuple[float, ...] = tuple(sorted(trajectories))
        self._by_velocity = dict(trajectories)

    def __len__(self) -> int:
        return len(self.velocities)

    def __iter__(self):
        return (self._by_velocity[v] for v in self.velocities)

    def lookup(self, velocity: float) -> LaneChangeTrajectory:
        """Template whose design velocity is nearest to ``velocity``;
        out-of-range queries clamp, exact midpoints take the slower one."""
        vs = self.velocities
        if velocity <= vs[0]:
            return self._by_velocity[vs[0]]
        if velocity >= vs[-1]:
            return self._by_velocity[vs[-1]]
        i = bisect_left(vs, velocity)
        lo, hi = vs[i - 1], vs[i]
        pick = lo if (velocity - lo) <= (hi - velocity) else hi
        return self._by_velocity[pick]


def build_trajectory_set(
    limits: KinematicLimits,
    grid: CellGrid,
    velocity_grid_step: float = 1.0,
    *,
    maneuver_cells: int = 3,
    lane_width: float = 3.5,
) -> TrajectorySet:
    """Constant-speed templates on a velocity grid spanning the limits.

    The grid starts at the first step above zero (a zero-speed maneuver
    would never complete) and ends at v_max; each template covers
    ``maneuver_cells`` cells at its design speed.
    """
    if velocity_grid_step <= 0.0:
        raise ConfigError("velocity_grid_step must be positive")
    if maneuver_cells < 1:
        raise ConfigError("maneuver_cells must be >= 1")
    start = max(limits.v_min, velocity_grid_step)
    if start > limits.v_max:
        raise ConfigError("no admissible velocity at or above the grid step")
    out: dict[float, LaneChangeTrajectory] = {}
    n = int((limits.v_max - start) / velocity_grid_step + 1e-9)
    for i in range(n + 1):
        v = start + i * velocity_grid_step
        per_cell = grid.cell_length / v
        out[v] = LaneChangeTrajectory(
            initial_velocity=v,
            final_velocity=v,
            durations=(per_cell,) * maneuver_cells,
            cell_length=grid.cell_length,
            lane_width=lane_width,
        )
    return TrajectorySet(out)


def lane_change_cell_times(
    t_start: float,
    trajectory: LaneChangeTrajectory,
    route_steps: tuple[tuple[tuple[int, int], ...], ...],
) -> dict[tuple[int, int], float]:
    """Arrival time of every cell a maneuver touches.

    ``route_steps`` are the paired maneuver steps of a change route, one
    step per maneuver cell; both cells of a pair get the same arrival
    (simultaneous dual occupancy).  Times follow the recurrence
    t(z+1) = t(z) + duration(z).
    """
    if len(route_steps) != len(trajectory.durations):
        raise ConfigError(
            f"route has {len(route_steps)} maneuver steps but trajectory "
            f"defines {len(trajectory.durations)} durations"
        )
    times: dict[tuple[int, int], float] = {}
    t = t_start
    for step, duration in zip(route_steps, trajectory.durations):
        for cell in step:
            times[cell] = t
        t += duration
    return times
