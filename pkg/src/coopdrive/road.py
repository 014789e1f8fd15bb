"""Cell-discretized road geometry, lane rules, routes, and the occupancy ledger.

The control zone is split per lane into fixed-length cells.  A vehicle
"arrives" at a cell when its front crosses the cell's upstream boundary,
and the safety rule is enforced on those arrival times: two vehicles
touching the same cell must arrive at least one headway apart.  Work-zone
cells are blocked and never routable.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field

from .dynamics import Action, VehicleState
from .errors import ConfigError, InfeasibleRouteError

NEVER = float("-inf")


@dataclass(frozen=True, slots=True)
class CellGrid:
    """Static geometry: lanes x cells, plus the set of blocked cells."""

    lane_count: int
    cells_per_lane: int
    cell_length: float
    blocked: frozenset[tuple[int, int]] = frozenset()
    conflict_zone: frozenset[tuple[int, int]] = frozenset()
    # blocked cells per lane, sorted, for range queries
    _blocked_by_lane: dict[int, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.lane_count < 1:
            raise ConfigError("lane_count must be >= 1")
        if self.cells_per_lane < 1:
            raise ConfigError("cells_per_lane must be >= 1")
        if not (self.cell_length > 0.0 and math.isfinite(self.cell_length)):
            raise ConfigError("cell_length must be positive and finite")
        by_lane: dict[int, list[int]] = {}
        for lane, cell in self.blocked:
            if not (0 <= lane < self.lane_count):
                raise ConfigError(f"blocked cell lane {lane} out of range")
            if not (0 <= cell < self.cells_per_lane):
                raise ConfigError(f"blocked cell index {cell} out of range")
            by_lane.setdefault(lane, []).append(cell)
        if len(by_lane) >= self.lane_count:
            raise ConfigError("at least one lane must be free of blocked cells")
        for cells in by_lane.values():
            cells.sort()
        object.__setattr__(self, "_blocked_by_lane", by_lane)

    @property
    def length(self) -> float:
        """Downstream end of the control zone, meters."""
        return self.cells_per_lane * self.cell_length

    def flat(self, lane: int, cell: int) -> int:
        return lane * self.cells_per_lane + cell

    def boundary(self, cell: int) -> float:
        """Position of the upstream edge of ``cell`` (cell may be one past
        the end, giving the exit boundary)."""
        return cell * self.cell_length

    def cell_at(self, position: float) -> int:
        """Cell containing ``position``; a position exactly on a boundary
        belongs to the cell it opens."""
        c = int(math.floor(position / self.cell_length + 1e-9))
        return min(max(c, 0), self.cells_per_lane - 1)

    def first_cell_ahead(self, position: float) -> int:
        """Lowest cell whose upstream boundary is strictly downstream of
        ``position``.  May equal cells_per_lane when nothing is left."""
        c = int(math.floor(position / self.cell_length + 1e-9)) + 1
        return max(c, 0)

    def is_blocked(self, lane: int, cell: int) -> bool:
        return (lane, cell) in self.blocked

    def lane_has_block(self, lane: int) -> bool:
        return lane in self._blocked_by_lane

    def first_blocked_at_or_after(self, lane: int, cell: int) -> int | None:
        cells = self._blocked_by_lane.get(lane)
        if not cells:
            return None
        i = bisect_left(cells, cell)
        return cells[i] if i < len(cells) else None


def build_grid(
    *,
    lane_count: int = 3,
    cells_per_lane: int = 48,
    cell_length: float = 5.0,
    work_zone: tuple[int, int, int] | None = (0, 30, 39),
    extra_blocked: tuple[tuple[int, int], ...] = (),
    conflict_zone: frozenset[tuple[int, int]] | None = None,
) -> CellGrid:
    """Construct a grid, validating every index against the geometry.

    ``work_zone`` is (lane, first cell, last cell) inclusive; passing None
    gives an unobstructed road.  The conflict zone defaults to the blocked
    span plus the same span on the adjacent lane vehicles merge into.
    """
    blocked: set[tuple[int, int]] = set(extra_blocked)
    if work_zone is not None:
        wz_lane, wz_start, wz_end = work_zone
        if not (0 <= wz_lane < lane_count):
            raise ConfigError(f"work zone lane {wz_lane} out of range")
        if not (0 <= wz_start <= wz_end < cells_per_lane):
            raise ConfigError(
                f"work zone cells {wz_start}..{wz_end} outside 0..{cells_per_lane - 1}"
            )
        blocked.update((wz_lane, c) for c in range(wz_start, wz_end + 1))
    if conflict_zone is None:
        zone: set[tuple[int, int]] = set(blocked)
        for lane, cell in list(blocked):
            neighbor = lane + 1 if lane + 1 < lane_count else lane - 1
            if neighbor >= 0:
                zone.add((neighbor, cell))
        conflict_zone = frozenset(zone)
    return CellGrid(
        lane_count=lane_count,
        cells_per_lane=cells_per_lane,
        cell_length=cell_length,
        blocked=frozenset(blocked),
        conflict_zone=conflict_zone,
    )


def allowed_actions(grid: CellGrid, lane: int) -> tuple[Action, ...]:
    """Action menu for a vehicle on ``lane``.

    Blocked lanes force a change; the outermost free lane cannot change
    further; in-between lanes choose.
    """
    if grid.lane_has_block(lane):
        return (Action.CHANGE_LANE,)
    target = change_target(grid, lane)
    if target is None:
        return (Action.STRAIGHT,)
    return (Action.STRAIGHT, Action.CHANGE_LANE)


def change_target(grid: CellGrid, lane: int) -> int | None:
    """Destination lane for a change from ``lane``, or None if changing is
    not available.  Higher-index neighbor preferred; never into a blocked
    lane."""
    for cand in (lane + 1, lane - 1):
        if 0 <= cand < grid.lane_count and not grid.lane_has_block(cand):
            return cand
    return None


@dataclass(frozen=True, slots=True)
class Route:
    """Ordered cell visits for one vehicle's trip through the zone.

    ``steps`` groups simultaneously-entered cells: straight travel yields
    single-cell steps, a lane change yields two-cell steps (origin lane and
    destination lane side by side) during the maneuver.  ``boundaries``
    holds the upstream-edge position of each step, measured on the
    longitudinal axis shared by all lanes.
    """

    vehicle_id: int
    action: Action
    origin_lane: int
    dest_lane: int | None
    start_cell: int | None  # first maneuver cell, None for straight routes
    steps: tuple[tuple[tuple[int, int], ...], ...]
    boundaries: tuple[float, ...]
    exit_boundary: float

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def final_lane(self) -> int:
        return self.dest_lane if self.dest_lane is not None else self.origin_lane

    def maneuver_steps(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.steps) if len(s) > 1)


def feasible_start_cells(
    grid: CellGrid, lane: int, dest: int, first_cell: int, maneuver_cells: int
) -> range:
    """Cells where a ``maneuver_cells``-long change beginning at or after
    ``first_cell`` can start without touching a blocked cell on either lane."""
    lo = first_cell
    hi = grid.cells_per_lane - maneuver_cells  # inclusive upper bound
    blk = grid.first_blocked_at_or_after(lane, first_cell)
    if blk is not None:
        hi = min(hi, blk - maneuver_cells)
    blk = grid.first_blocked_at_or_after(dest, first_cell)
    if blk is not None:
        hi = min(hi, blk - maneuver_cells)
    return range(lo, hi + 1)


def route_cells(
    grid: CellGrid,
    vehicle: VehicleState,
    action: Action,
    *,
    maneuver_cells: int = 3,
    start_cell: int | None = None,
) -> Route:
    """Build the ordered cell-visit plan for ``vehicle`` under ``action``.

    Straight routes run down the current lane; change routes occupy paired
    cells on both lanes for ``maneuver_cells`` consecutive steps starting at
    ``start_cell`` (defaulting to the earliest feasible cell), then continue
    on the destination lane.  Raises InfeasibleRouteError when the action
    cannot be realized from the vehicle's position.
    """
    lane = vehicle.lane
    if not (0 <= lane < grid.lane_count):
        raise InfeasibleRouteError(f"vehicle {vehicle.id} on unknown lane {lane}")
    first = grid.first_cell_ahead(vehicle.position)

    if action is Action.STRAIGHT:
        if first >= grid.cells_per_lane:
            raise InfeasibleRouteError(f"vehicle {vehicle.id} already past the zone")
        blk = grid.first_blocked_at_or_after(lane, first)
        if blk is not None:
            raise InfeasibleRouteError(
                f"vehicle {vehicle.id} cannot go straight through blocked "
                f"cell {blk} on lane {lane}"
            )
        cells = range(first, grid.cells_per_lane)
        return Route(
            vehicle_id=vehicle.id,
            action=action,
            origin_lane=lane,
            dest_lane=None,
            start_cell=None,
            steps=tuple(((lane, c),) for c in cells),
            boundaries=tuple(grid.boundary(c) for c in cells),
            exit_boundary=grid.length,
        )

    dest = change_target(grid, lane)
    if dest is None:
        raise InfeasibleRouteError(f"no destination lane for a change from lane {lane}")
    candidates = feasible_start_cells(grid, lane, dest, first, maneuver_cells)
    if start_cell is None:
        if len(candidates) == 0:
            raise InfeasibleRouteError(
                f"vehicle {vehicle.id} has no room left to change off lane {lane}"
            )
        start_cell = candidates[0]
    elif start_cell not in candidates:
        raise InfeasibleRouteError(
            f"maneuver start cell {start_cell} infeasible for vehicle {vehicle.id}"
        )

    steps: list[tuple[tuple[int, int], ...]] = []
    bounds: list[float] = []
    for c in range(first, start_cell):
        steps.append(((lane, c),))
        bounds.append(grid.boundary(c))
    for c in range(start_cell, start_cell + maneuver_cells):
        steps.append(((lane, c), (dest, c)))
        bounds.append(grid.boundary(c))
    for c in range(start_cell + maneuver_cells, grid.cells_per_lane):
        steps.append(((dest, c),))
        bounds.append(grid.boundary(c))
    return Route(
        vehicle_id=vehicle.id,
        action=action,
        origin_lane=lane,
        dest_lane=dest,
        start_cell=start_cell,
        steps=tuple(steps),
        boundaries=tuple(bounds),
        exit_boundary=grid.length,
    )


class OccupancySchedule:
    """Latest scheduled arrival time per cell (the t_max ledger).

    Values start at -inf (never visited) and only move forward in time;
    recording keeps the max so repeated writes are safe in any order.
    """

    __slots__ = ("grid", "times")

    def __init__(self, grid: CellGrid, times: list[float] | None = None):
        self.grid = grid
        n = grid.lane_count * grid.cells_per_lane
        if times is None:
            self.times = [NEVER] * n
        else:
            if len(times) != n:
                raise ConfigError("occupancy table size mismatch")
            self.times = list(times)

    def get(self, lane: int, cell: int) -> float:
        return self.times[self.grid.flat(lane, cell)]

    def latest(self, cells: tuple[tuple[int, int], ...]) -> float:
        """Max recorded arrival over a step's cell group."""
        times = self.times
        n = self.grid.cells_per_lane
        best = NEVER
        for ln, c in cells:
            v = times[ln * n + c]
            if v > best:
                best = v
        return best

    def record(self, lane: int, cell: int, t: float) -> None:
        i = self.grid.flat(lane, cell)
        if t > self.times[i]:
            self.times[i] = t

    def record_step(self, cells: tuple[tuple[int, int], ...], t: float) -> None:
        for ln, c in cells:
            self.record(ln, c, t)

    def seed_vehicle(self, vehicle: VehicleState, t_now: float) -> None:
        """Mark the cell a vehicle currently occupies as claimed at t_now.

        Conservative: the true arrival was earlier, so followers get pushed
        at least as far back as physically required.
        """
        if vehicle.position >= self.grid.length:
            return
        self.record(vehicle.lane, self.grid.cell_at(vehicle.position), t_now)

    def copy(self) -> "OccupancySchedule":
        return OccupancySchedule(self.grid, self.times)
