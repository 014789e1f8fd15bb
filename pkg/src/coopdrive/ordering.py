"""Passing orders: the priority sequence vehicles use to cross the zone.

An order is a sequence of (vehicle id, action) pairs, highest priority
first.  Orders may be partial (a tree-interior prefix) or complete.  The
hard validity rules: a vehicle appears at most once, same-lane vehicles
keep their physical front-to-back sequence, and each action must be on
the menu its lane allows.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dynamics import Action, VehicleState
from .road import CellGrid, allowed_actions


@dataclass(frozen=True, slots=True)
class PassingOrder:
    entries: tuple[tuple[int, Action], ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> tuple[int, ...]:
        return tuple(vid for vid, _ in self.entries)

    def assigned(self) -> frozenset[int]:
        return frozenset(vid for vid, _ in self.entries)

    def append(self, vehicle_id: int, action: Action) -> "PassingOrder":
        return PassingOrder(self.entries + ((vehicle_id, action),))

    def to_string(self) -> str:
        """Log form: ids left to right by priority, "_cl" marks a change."""
        parts = []
        for vid, action in self.entries:
            suffix = "_cl" if action is Action.CHANGE_LANE else ""
            parts.append(f"{vid}{suffix}")
        return " ".join(parts)


def lane_queues(vehicles: list[VehicleState]) -> dict[int, list[VehicleState]]:
    """Vehicles grouped by lane, front (largest position) first."""
    queues: dict[int, list[VehicleState]] = {}
    for v in vehicles:
        queues.setdefault(v.lane, []).append(v)
    for q in queues.values():
        q.sort(key=lambda v: (-v.position, v.id))
    return queues


def forced_action(grid: CellGrid, lane: int) -> Action:
    """Default action for a lane: change only when the lane is blocked."""
    menu = allowed_actions(grid, lane)
    return menu[0] if len(menu) == 1 else Action.STRAIGHT


def fifo_order(vehicles: list[VehicleState], grid: CellGrid) -> PassingOrder:
    """Baseline order: control-zone entry time ascending, ties by id.

    Lane rules fix the action everywhere a choice exists is resolved to
    straight.  A vehicle that changed lanes can carry an earlier entry
    time than the one it now stands behind, so each lane's slots in the
    ranking are re-filled front-first; otherwise the pair waits on each
    other forever.
    """
    ranked = sorted(vehicles, key=lambda v: (v.entry_time, v.id))
    queues = {lane: iter(q) for lane, q in lane_queues(vehicles).items()}
    entries = []
    for v in ranked:
        w = next(queues[v.lane])
        entries.append((w.id, forced_action(grid, w.lane)))
    return PassingOrder(tuple(entries))


def validate(order: PassingOrder, vehicles: list[VehicleState], grid: CellGrid) -> bool:
    by_id = {v.id: v for v in vehicles}
    seen: set[int] = set()
    last_rank: dict[int, int] = {}  # lane -> rank of latest scheduled vehicle
    ranks: dict[int, int] = {}
    for lane, queue in lane_queues(vehicles).items():
        for rank, v in enumerate(queue):
            ranks[v.id] = rank
    for vid, action in order.entries:
        v = by_id.get(vid)
        if v is None or vid in seen:
            return False
        seen.add(vid)
        if action not in allowed_actions(grid, v.lane):
            return False
        rank = ranks[vid]
        prev = last_rank.get(v.lane)
        if prev is not None and rank < prev:
            return False  # follower scheduled before its leader
        last_rank[v.lane] = rank
    return True


def successors(
    partial: PassingOrder, vehicles: list[VehicleState], grid: CellGrid
) -> list[PassingOrder]:
    """All one-vehicle extensions of a valid partial order.

    Exactly the unassigned front vehicle of each lane is eligible; a front
    with a two-action menu yields one child per action.  Children are
    ordered by lane index, straight before change, which fixes the
    expansion sequence everywhere downstream.
    """
    assigned = partial.assigned()
    queues = lane_queues(vehicles)
    children: list[PassingOrder] = []
    for lane in sorted(queues):
        front = next((v for v in queues[lane] if v.id not in assigned), None)
        if front is None:
            continue
        for action in allowed_actions(grid, lane):
            children.append(partial.append(front.id, action))
    return children
