"""Order-to-trajectory interpretation: the lower planning level.

Given a passing order, vehicles are scheduled one at a time in priority
sequence.  Each vehicle receives per-cell target arrival times no earlier
than one headway after every cell's last claimant, a piecewise-constant
acceleration profile that realizes those targets, and a delay: arrival at
its final cell minus the earliest physically possible arrival.  The sum of
delays is the objective the upper-level search minimizes.

Scheduling is incremental by design: a ScheduleState extends to a new
state one vehicle at a time, so a search tree can share all work done for
a common order prefix.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Sequence

from .dynamics import (
    Action,
    KinematicLimits,
    SafetyParams,
    VehicleState,
    car_following_step,
    FollowingParams,
    is_lane_change_safe,
)
from .errors import InfeasibleTargetsError
from .ordering import PassingOrder, lane_queues
from .profiles import (
    Profile,
    as_profile,
    exact_arrival_segments,
    earliest_arrivals,
    min_time_segments,
)
from .road import (
    CellGrid,
    OccupancySchedule,
    Route,
    allowed_actions,
    change_target,
    feasible_start_cells,
    route_cells,
)
from .trajectories import LaneChangeTrajectory, TrajectorySet, build_trajectory_set

_TOL = 1e-9


@dataclass(frozen=True)
class PlannerParams:
    """Everything the interpreter needs besides the vehicles and the grid."""

    limits: KinematicLimits
    safety: SafetyParams
    trajectory_set: TrajectorySet
    maneuver_cells: int = 3
    defer_penalty: float = 60.0

    @staticmethod
    def defaults(grid: CellGrid, limits: KinematicLimits | None = None,
                 safety: SafetyParams | None = None) -> "PlannerParams":
        limits = limits or KinematicLimits()
        return PlannerParams(
            limits=limits,
            safety=safety or SafetyParams(),
            trajectory_set=build_trajectory_set(limits, grid),
        )


@dataclass(frozen=True)
class VehicleSchedule:
    """One vehicle's committed plan: cell arrivals plus a replayable motion."""

    vehicle_id: int
    action: Action
    route: Route | None
    arrivals: tuple[float, ...]
    exit_time: float
    delay: float
    exact: bool
    deferred: bool = False
    pre: Profile | None = None
    trajectory: LaneChangeTrajectory | None = None
    maneuver_start: float | None = None
    maneuver_start_pos: float | None = None
    post: Profile | None = None

    def state_at(self, t: float) -> tuple[int, float, float, float]:
        """(lane, position, velocity, lateral fraction toward the target
        lane) at time t.  The lane attribute flips at the midpoint of the
        lateral motion."""
        r = self.route
        origin = r.origin_lane if r is not None else 0
        if self.maneuver_start is None or t < self.maneuver_start:
            p, v = self.pre.state(t)
            return origin, p, v, 0.0
        traj = self.trajectory
        elapsed = t - self.maneuver_start
        if elapsed < traj.total_duration:
            p = self.maneuver_start_pos + traj.longitudinal_offset(elapsed)
            v = traj.velocity_at(elapsed)
            frac = traj.lateral_offset(elapsed) / traj.lane_width
            lane = r.dest_lane if frac >= 0.5 else origin
            return lane, p, v, frac
        if self.post is not None:
            p, v = self.post.state(t)
        else:
            end_t = self.maneuver_start + traj.total_duration
            end_p = self.maneuver_start_pos + traj.longitudinal_offset(traj.total_duration)
            p = end_p + traj.final_velocity * (t - end_t)
            v = traj.final_velocity
        return r.dest_lane, p, v, 1.0


@dataclass(frozen=True)
class FitResult:
    profile: Profile
    arrivals: tuple[float, ...]
    end_time: float
    end_pos: float
    end_vel: float
    exit_time: float
    exact: bool


def _required_accel(pos: float, vel: float, t: float, b: float, target: float,
                    limits: KinematicLimits) -> float:
    """Restrictiveness of one target: the constant acceleration that meets
    it exactly, +inf when every admissible profile arrives at or after the
    target anyway (the constraint cannot bind)."""
    d = b - pos
    T = target - t
    if d <= _TOL or T <= _TOL:
        return math.inf
    a = 2.0 * (d - vel * T) / (T * T)
    v_end = vel + a * T
    if v_end > limits.v_max + 1e-9:
        slack = limits.v_max * T - d
        if slack <= _TOL:
            return math.inf
        a = (limits.v_max - vel) ** 2 / (2.0 * slack)
        if a > limits.u_max + 1e-9:
            return math.inf
    elif a > limits.u_max + 1e-9:
        return math.inf
    return a


def fit_targets(
    t0: float,
    pos: float,
    vel: float,
    boundaries: Sequence[float],
    targets: Sequence[float],
    limits: KinematicLimits,
    exit_boundary: float | None = None,
    min_times: Sequence[float] | None = None,
) -> FitResult:
    """Fit a profile arriving at every boundary no earlier than its target.

    Repeatedly finds the most restrictive remaining target (smallest
    required acceleration), commits segments that meet it exactly, and
    re-evaluates the rest from the new state.  Targets that no admissible
    profile could beat are skipped; the vehicle simply arrives when it
    arrives, which is at or after such a target by definition.  A committed
    block is re-split whenever it would cross an intermediate boundary
    before that boundary's target.

    ``min_times`` are optional lower bounds on the fastest possible arrival
    at each boundary.  A target at or below its bound can never bind (the
    fastest reachable arrival already satisfies it from any state on an
    admissible trajectory), so those indices skip the selection scans.
    """
    n = len(boundaries)
    if min_times is None:
        active = list(range(n))
    else:
        active = [i for i in range(n) if targets[i] > min_times[i] + 1e-9]
    floor = max(limits.v_min, 0.0)
    segs: list[tuple[float, float, float, float, float]] = []
    t, p, v = t0, pos, max(0.0, min(vel, limits.v_max))
    exact = True
    i0 = 0
    a0 = 0  # index into active of the first target not yet committed past
    dead: set[int] = set()  # targets proven unbindable from the current state
    v_max = limits.v_max
    u_max = limits.u_max
    while a0 < len(active):
        # inline of _required_accel over the remaining candidates; this scan
        # runs once per committed block and dominates the fit cost
        z_best, a_best = -1, math.inf
        for i in active[a0:]:
            if i in dead:
                continue
            d = boundaries[i] - p
            T = targets[i] - t
            if d <= _TOL or T <= _TOL:
                continue
            a = 2.0 * (d - v * T) / (T * T)
            if v + a * T > v_max + 1e-9:
                slack = v_max * T - d
                if slack <= _TOL:
                    continue
                a = (v_max - v) ** 2 / (2.0 * slack)
            if a > u_max + 1e-9:
                continue
            if a < a_best:
                a_best, z_best = a, i
        if z_best < 0:
            break  # nothing can bind: finish at minimum time
        z = z_best
        try:
            while True:
                block, crossing, ok = exact_arrival_segments(
                    t, p, v, boundaries[z], targets[z],
                    floor, limits.v_max, limits.u_min, limits.u_max,
                )
                if z > i0 and block:
                    probe = Profile(tuple(block))
                    hit = -1
                    for i in active[a0:]:
                        if i >= z:
                            break
                        if probe.crossing_time(boundaries[i]) < targets[i] - 1e-9:
                            hit = i
                            break
                    if hit >= 0 and math.isfinite(_required_accel(
                            p, v, t, boundaries[hit], targets[hit], limits)):
                        z = hit
                        continue
                break
        except InfeasibleTargetsError:
            # tolerance disagreement with the selector: the target cannot be
            # met exactly, so it cannot bind either
            dead.add(z)
            continue
        if not ok:
            exact = False
        if block:
            segs.extend(block)
            last = block[-1]
            dt_last = last[4] - last[0]
            t = crossing
            p = boundaries[z]
            v = max(last[2] + last[3] * dt_last, 0.0)
        i0 = z + 1
        a0 = bisect_left(active, i0)

    end_target = exit_boundary if exit_boundary is not None else (
        boundaries[-1] if n else pos)
    if end_target > p + _TOL:
        segs.extend(min_time_segments(t, p, v, end_target,
                                      limits.v_max, limits.u_max))
        last = segs[-1]
        dt_last = last[4] - last[0]
        t = last[4]
        p = last[1] + last[2] * dt_last + 0.5 * last[3] * dt_last * dt_last
        v = max(last[2] + last[3] * dt_last, 0.0)

    profile = as_profile(segs, t0, pos, vel)
    sweep = list(boundaries)
    if exit_boundary is not None:
        sweep.append(exit_boundary)
    crossings = profile.crossing_times(sweep)
    arrivals: list[float] = []
    prev = -math.inf
    for i in range(n):
        cross = crossings[i]
        official = max(cross, targets[i], prev + 1e-9)
        if cross < targets[i] - 1e-6:
            exact = False
        arrivals.append(official)
        prev = official
    exit_time = crossings[-1] if exit_boundary is not None else t
    return FitResult(
        profile=profile,
        arrivals=tuple(arrivals),
        end_time=t,
        end_pos=p,
        end_vel=v,
        exit_time=exit_time,
        exact=exact,
    )


def fit_constant_accelerations(
    vehicle: VehicleState,
    boundaries: Sequence[float],
    targets: Sequence[float],
    limits: KinematicLimits,
    *,
    t0: float | None = None,
    strict: bool = True,
) -> Profile:
    """Public fitting entry point: profile for one vehicle and its targets.

    With ``strict`` the fit must meet every target exactly or arrive late
    only where no admissible profile could do better; a target that would
    require braking beyond the limit raises InfeasibleTargetsError.
    """
    start = vehicle.entry_time if t0 is None else t0
    res = fit_targets(start, vehicle.position, vehicle.velocity,
                      boundaries, targets, limits)
    if strict and not res.exact:
        raise InfeasibleTargetsError(
            f"vehicle {vehicle.id} cannot brake hard enough to respect its targets"
        )
    return res.profile


class PlanningContext:
    """Immutable per-replan snapshot: geometry, vehicle states, caches.

    Everything that does not depend on the passing order is computed here
    once, so extending a schedule by one vehicle touches only that
    vehicle's own fitting work.
    """

    def __init__(
        self,
        vehicles: list[VehicleState],
        grid: CellGrid,
        params: PlannerParams,
        *,
        t_now: float = 0.0,
        seed_vehicles: list[VehicleState] | None = None,
        committed: Sequence[tuple[int, int, float]] = (),
        base_ledger: OccupancySchedule | None = None,
    ):
        self.grid = grid
        self.params = params
        self.limits = params.limits
        self.safety = params.safety
        self.tset = params.trajectory_set
        self.t_now = t_now
        self.vehicles = {v.id: v for v in vehicles}
        self.order_pool = list(vehicles)
        self.all_states = list(vehicles)
        if seed_vehicles is not None:
            self.all_states += [w for w in seed_vehicles
                                if w.id not in self.vehicles]

        # history of cell claims carries over so new plans keep their gap from it
        self.base_ledger = (base_ledger.copy() if base_ledger is not None
                            else OccupancySchedule(grid))
        for v in (seed_vehicles if seed_vehicles is not None else vehicles):
            self.base_ledger.seed_vehicle(v, t_now)
        for lane, cell, t in committed:
            self.base_ledger.record(lane, cell, t)

        lim = self.limits
        self.first_cell: dict[int, int] = {}
        self.boundaries: dict[int, tuple[float, ...]] = {}
        self.t_min: dict[int, tuple[float, ...]] = {}
        self.t_min_exit: dict[int, float] = {}
        self.speed_at: dict[int, tuple[float, ...]] = {}
        self.change_candidates: dict[int, range] = {}
        self.change_safe_now: dict[int, bool] = {}
        self.change_tail: dict[int, VehicleState | None] = {}
        self._routes: dict[tuple[int, Action, int | None], Route] = {}
        # a vehicle's schedule is a pure function of the claim rows it can
        # touch, so states that agree there share one scheduling scan
        self._sched_cache: dict[tuple, VehicleSchedule] = {}

        queues = lane_queues(vehicles)
        for v in vehicles:
            first = grid.first_cell_ahead(v.position)
            self.first_cell[v.id] = first
            bounds = tuple(grid.boundary(c) for c in range(first, grid.cells_per_lane))
            self.boundaries[v.id] = bounds
            v0 = max(0.0, min(v.velocity, lim.v_max))
            all_d = [b - v.position for b in bounds] + [grid.length - v.position]
            times = earliest_arrivals(all_d, v0, lim.v_max, lim.u_max)
            self.t_min[v.id] = tuple(t_now + x for x in times[:-1])
            self.t_min_exit[v.id] = t_now + times[-1]
            self.speed_at[v.id] = tuple(
                min(lim.v_max, math.sqrt(v0 * v0 + 2.0 * lim.u_max * max(d, 0.0)))
                for d in all_d[:-1]
            )
            if Action.CHANGE_LANE in allowed_actions(grid, v.lane):
                dest = change_target(grid, v.lane)
                self.change_candidates[v.id] = feasible_start_cells(
                    grid, v.lane, dest, first, params.maneuver_cells)
                self.change_safe_now[v.id] = self._static_change_safety(v, dest, queues)
                # nearest trailing vehicle in the target lane; a change may
                # not claim cells this vehicle is too fast to stay out of
                tail = None
                for w in self.all_states:
                    if (w.id != v.id and w.lane == dest
                            and w.position < v.position - 1e-9):
                        if tail is None or w.position > tail.position:
                            tail = w
                self.change_tail[v.id] = tail
            else:
                self.change_candidates[v.id] = range(0)
                self.change_safe_now[v.id] = False
                self.change_tail[v.id] = None

    def _static_change_safety(self, ego: VehicleState, dest: int,
                              queues: dict[int, list[VehicleState]]) -> bool:
        neighbors: list[VehicleState] = []
        ahead = [w for w in queues.get(ego.lane, ()) if w.position > ego.position]
        if ahead:
            neighbors.append(min(ahead, key=lambda w: w.position))
        dest_q = queues.get(dest, ())
        lead = [w for w in dest_q if w.position >= ego.position]
        tail = [w for w in dest_q if w.position < ego.position]
        if lead:
            neighbors.append(min(lead, key=lambda w: w.position))
        if tail:
            neighbors.append(max(tail, key=lambda w: w.position))
        return is_lane_change_safe(ego, neighbors, self.limits, self.safety)

    def route(self, vid: int, action: Action, start_cell: int | None = None) -> Route:
        key = (vid, action, start_cell)
        r = self._routes.get(key)
        if r is None:
            r = route_cells(self.grid, self.vehicles[vid], action,
                            maneuver_cells=self.params.maneuver_cells,
                            start_cell=start_cell)
            self._routes[key] = r
        return r

    def initial_state(self) -> "ScheduleState":
        return ScheduleState(self, self.base_ledger.copy(), (), {}, 0.0)


class ScheduleState:
    """A partial order plus everything scheduled for it so far."""

    __slots__ = ("ctx", "ledger", "entries", "schedules", "total_delay")

    def __init__(self, ctx: PlanningContext, ledger: OccupancySchedule,
                 entries: tuple[tuple[int, Action], ...],
                 schedules: dict[int, VehicleSchedule], total_delay: float):
        self.ctx = ctx
        self.ledger = ledger
        self.entries = entries
        self.schedules = schedules
        self.total_delay = total_delay

    def order(self) -> PassingOrder:
        return PassingOrder(self.entries)

    def extend(self, vid: int, action: Action) -> "ScheduleState":
        ledger = self.ledger.copy()
        sched = _commit(self.ctx, vid, action, ledger)
        schedules = dict(self.schedules)
        schedules[vid] = sched
        return ScheduleState(
            self.ctx, ledger, self.entries + ((vid, action),),
            schedules, self.total_delay + sched.delay,
        )

    def extend_many(self, moves: "list[tuple[int, Action]]") -> "ScheduleState":
        """Like chained extend() but copies the ledger and schedule map once.
        Rollouts append whole suffixes, so this keeps them linear."""
        ledger = self.ledger.copy()
        schedules = dict(self.schedules)
        total = self.total_delay
        for vid, action in moves:
            sched = _commit(self.ctx, vid, action, ledger)
            schedules[vid] = sched
            total += sched.delay
        return ScheduleState(
            self.ctx, ledger, self.entries + tuple(moves), schedules, total,
        )


def _commit(ctx: PlanningContext, vid: int, action: Action,
            ledger: OccupancySchedule) -> VehicleSchedule:
    # schedules one vehicle and records its cell claims into the ledger
    grid = ctx.grid
    cpl = grid.cells_per_lane
    first = min(ctx.first_cell[vid], cpl)
    lane = ctx.vehicles[vid].lane
    times = ledger.times
    base = lane * cpl
    if action is Action.CHANGE_LANE:
        dest = change_target(grid, lane)
        d_base = dest * cpl
        key = (vid, action, tuple(times[base + first: base + cpl]),
               tuple(times[d_base + first: d_base + cpl]))
    else:
        key = (vid, action, tuple(times[base + first: base + cpl]))
    sched = ctx._sched_cache.get(key)
    if sched is None:
        if action is Action.CHANGE_LANE:
            sched = _schedule_change(ctx, vid, ledger)
        else:
            sched = _schedule_straight(ctx, vid, ledger)
        ctx._sched_cache[key] = sched
    if not sched.deferred and sched.route is not None:
        # inline of ledger.record_step over the whole route (hot path)
        for step, t_arr in zip(sched.route.steps, sched.arrivals):
            for ln, c in step:
                i = ln * cpl + c
                if t_arr > times[i]:
                    times[i] = t_arr
    return sched


def _forced_arrival(t0: float, position: float, velocity: float,
                    boundary: float, beta: float) -> float:
    """Latest time a vehicle can reach ``boundary`` braking as hard as its
    authority allows; infinite when it can stop short of the line."""
    d = boundary - position
    if d <= 0.0:
        return t0
    if velocity * velocity <= 2.0 * beta * max(0.0, d - 0.05):
        return math.inf
    return t0 + (velocity - math.sqrt(
        max(0.0, velocity * velocity - 2.0 * beta * d))) / beta


def _empty_passage(ctx: PlanningContext, vid: int, action: Action) -> VehicleSchedule:
    # vehicle already inside its last cell: nothing left to schedule, but
    # the route must still name its lane so replay keeps it there
    veh = ctx.vehicles[vid]
    lim = ctx.limits
    v0 = max(0.0, min(veh.velocity, lim.v_max))
    segs = min_time_segments(ctx.t_now, veh.position, v0,
                             ctx.grid.length, lim.v_max, lim.u_max)
    profile = as_profile(segs, ctx.t_now, veh.position, v0)
    route = Route(vehicle_id=vid, action=Action.STRAIGHT,
                  origin_lane=veh.lane, dest_lane=veh.lane, start_cell=None,
                  steps=(), boundaries=(), exit_boundary=ctx.grid.length)
    return VehicleSchedule(
        vehicle_id=vid, action=action, route=route, arrivals=(),
        exit_time=profile.crossing_time(ctx.grid.length),
        delay=0.0, exact=True, pre=profile,
    )


def _schedule_straight(ctx: PlanningContext, vid: int,
                       ledger: OccupancySchedule) -> VehicleSchedule:
    veh = ctx.vehicles[vid]
    if ctx.first_cell[vid] >= ctx.grid.cells_per_lane:
        return _empty_passage(ctx, vid, Action.STRAIGHT)
    route = ctx.route(vid, Action.STRAIGHT)
    bounds = ctx.boundaries[vid]
    t_min = ctx.t_min[vid]
    dt = ctx.safety.cell_headway
    targets = [max(t_min[i], ledger.latest(route.steps[i]) + dt)
               for i in range(len(bounds))]
    res = fit_targets(ctx.t_now, veh.position, veh.velocity, bounds, targets,
                      ctx.limits, exit_boundary=route.exit_boundary,
                      min_times=t_min)
    delay = max(0.0, res.arrivals[-1] - t_min[-1])
    return VehicleSchedule(
        vehicle_id=vid, action=Action.STRAIGHT, route=route,
        arrivals=res.arrivals, exit_time=res.exit_time, delay=delay,
        exact=res.exact, pre=res.profile,
    )


def _deferred(ctx: PlanningContext, vid: int) -> VehicleSchedule:
    return VehicleSchedule(
        vehicle_id=vid, action=Action.CHANGE_LANE, route=None, arrivals=(),
        exit_time=math.inf, delay=ctx.params.defer_penalty,
        exact=True, deferred=True,
    )


def _schedule_change(ctx: PlanningContext, vid: int,
                     ledger: OccupancySchedule) -> VehicleSchedule:
    veh = ctx.vehicles[vid]
    candidates = ctx.change_candidates[vid]
    if len(candidates) == 0:
        return _deferred(ctx, vid)
    first = ctx.first_cell[vid]
    t_min = ctx.t_min[vid]
    lim = ctx.limits
    bounds = ctx.boundaries[vid]
    grid = ctx.grid
    dest = change_target(grid, veh.lane)
    dt = ctx.safety.cell_headway
    k = ctx.params.maneuver_cells
    cpl = grid.cells_per_lane
    times = ledger.times
    o_base = veh.lane * cpl
    d_base = dest * cpl
    end_b = bounds[-1]
    inv_v = 1.0 / lim.v_max

    # Claims already in the ledger bound the final-cell arrival from below:
    # claim + headway at any cell the route visits, plus a free-flow tail
    # from there.  A suffix max over destination-lane cells covers the part
    # after the merge, a prefix max over origin-lane cells the approach,
    # and the maneuver's own paired cells fill the middle.
    suffix = [-math.inf] * (cpl + 1)
    for c in range(cpl - 1, first - 1, -1):
        v_ = times[d_base + c] + dt + (end_b - bounds[c - first]) * inv_v
        suffix[c] = v_ if v_ > suffix[c + 1] else suffix[c + 1]

    # Ranking estimate on top of the bound: claim spacing at the merge cell
    # approximates the pace of the queue being joined, and the maneuver runs
    # k cells at that pace instead of free flow.  Only the ordering uses it;
    # pruning sticks to the provable bound.
    free_pace = grid.cell_length * inv_v
    ranked: list[tuple[float, float, int]] = []
    prefix = -math.inf
    folded = first  # origin cells below this are already in the prefix max
    for s in candidates:
        m0 = s - first
        while folded < s:
            v_ = (times[o_base + folded] + dt
                  + (end_b - bounds[folded - first]) * inv_v)
            if v_ > prefix:
                prefix = v_
            folded += 1
        lb = t_min[m0] + (end_b - bounds[m0]) * inv_v
        if prefix > lb:
            lb = prefix
        if suffix[s + k] > lb:
            lb = suffix[s + k]
        for j in range(k):
            c = s + j
            claim = times[o_base + c]
            if times[d_base + c] > claim:
                claim = times[d_base + c]
            v_ = claim + dt + (end_b - bounds[m0 + j]) * inv_v
            if v_ > lb:
                lb = v_
        g0, g1 = times[d_base + s - 1] if s > 0 else -math.inf, times[d_base + s]
        if g0 > -math.inf and g1 > g0:
            pace = g1 - g0
            if pace > 5.0:
                pace = 5.0
            elif pace < free_pace:
                pace = free_pace
        else:
            pace = free_pace
        ranked.append((lb + k * (pace - free_pace), lb, s))
    ranked.sort()

    # no start cell can land the final cell before its current claim plus
    # one headway, or before free flow; a candidate that gets there is optimal
    floor = max(t_min[-1], times[d_base + cpl - 1] + dt)

    # best-estimate-first: fitting starts where the queue pace predicts the
    # least delay, and every later candidate still checks its provable bound
    best: VehicleSchedule | None = None
    best_end = math.inf
    v_hint: float | None = None
    for _, lb, s in ranked:
        if best is not None:
            if best_end <= floor + 1e-9:
                break
            if lb >= best_end - 1e-12:
                continue
        cand = _change_at(ctx, veh, s, ledger, v_hint, best_end)
        if cand is None:
            continue
        v_hint = cand.trajectory.initial_velocity
        end = cand.arrivals[-1] if cand.arrivals else cand.exit_time
        if best is None or end < best_end - 1e-12:
            best, best_end = cand, end
    if best is None:
        return _deferred(ctx, vid)
    return best


def _change_at(ctx: PlanningContext, veh: VehicleState, s: int,
               ledger: OccupancySchedule,
               v_hint: float | None = None,
               abandon_above: float = math.inf) -> VehicleSchedule | None:
    """Schedule for one specific maneuver start cell.

    Returns None without fitting the post-merge stretch when even a
    free-flow continuation from the fitted maneuver end could not finish
    before ``abandon_above``; such a candidate cannot displace the caller's
    incumbent."""
    vid = veh.id
    grid = ctx.grid
    lim = ctx.limits
    dt = ctx.safety.cell_headway
    k = ctx.params.maneuver_cells
    first = ctx.first_cell[vid]
    m0 = s - first
    route = ctx.route(vid, Action.CHANGE_LANE, s)
    bounds = ctx.boundaries[vid]
    t_min = ctx.t_min[vid]
    steps = route.steps
    n = len(steps)

    # neighboring start cells converge to near-identical merge speeds, so a
    # caller scanning candidates passes the last one as the seed
    v_hat = ctx.speed_at[vid][m0]
    if v_hint is not None and v_hint < v_hat:
        v_hat = v_hint
    traj = ctx.tset.lookup(v_hat)
    approach: FitResult | None = None
    for _ in range(3):
        prefix = [0.0]
        for d in traj.durations[:-1]:
            prefix.append(prefix[-1] + d)
        need = t_min[m0]
        for j in range(k):
            need = max(need, ledger.latest(steps[m0 + j]) + dt - prefix[j])
        if m0 + k < n:
            need = max(need, ledger.latest(steps[m0 + k]) + dt - traj.total_duration)
        a_bounds = bounds[: m0 + 1]
        a_targets = [max(t_min[i], ledger.latest(steps[i]) + dt) for i in range(m0)]
        a_targets.append(need)
        approach = fit_targets(ctx.t_now, veh.position, veh.velocity,
                               a_bounds, a_targets, lim,
                               min_times=t_min[: m0 + 1])
        nxt = ctx.tset.lookup(approach.end_vel)
        if nxt is traj:
            break
        traj = nxt
    assert approach is not None

    start = approach.arrivals[-1]
    prefix = [0.0]
    for d in traj.durations[:-1]:
        prefix.append(prefix[-1] + d)
    arrivals = list(approach.arrivals[:-1])
    for j in range(k):
        arrivals.append(start + prefix[j])
    man_end = start + traj.total_duration

    # a trailing target-lane vehicle that cannot brake clear of the claimed
    # cells pins the maneuver: its unavoidable arrivals must stay one
    # headway behind every paired claim, or this start cell is unusable
    tail = ctx.change_tail.get(vid)
    if tail is not None:
        for j in range(k + 1):
            i = m0 + j
            if i >= n:
                break
            arr = start + prefix[j] if j < k else man_end
            latest = _forced_arrival(ctx.t_now, tail.position, tail.velocity,
                                     bounds[i], lim.a_max_brake)
            if latest == math.inf:
                break
            if arr + dt + 0.05 > latest:
                return None

    exact = approach.exact
    if m0 + k < n:
        if (man_end + (bounds[-1] - bounds[m0 + k]) / lim.v_max
                >= abandon_above - 1e-12):
            return None
        post = fit_targets(
            man_end, bounds[m0 + k], traj.final_velocity,
            bounds[m0 + k + 1:],
            [ledger.latest(steps[i]) + dt for i in range(m0 + k + 1, n)],
            lim, exit_boundary=route.exit_boundary,
            min_times=t_min[m0 + k + 1:],
        )
        arrivals.append(man_end)
        arrivals.extend(post.arrivals)
        exit_time = post.exit_time
        post_profile = post.profile
        exact = exact and post.exact
    else:
        exit_time = man_end
        post_profile = None

    delay = max(0.0, arrivals[-1] - t_min[-1])
    return VehicleSchedule(
        vehicle_id=vid, action=Action.CHANGE_LANE, route=route,
        arrivals=tuple(arrivals), exit_time=exit_time, delay=delay,
        exact=exact, pre=approach.profile, trajectory=traj,
        maneuver_start=start, maneuver_start_pos=bounds[m0],
        post=post_profile,
    )


def interpret(
    order: PassingOrder,
    vehicles: list[VehicleState],
    grid: CellGrid,
    params: PlannerParams | None = None,
    *,
    t_now: float = 0.0,
    seed_vehicles: list[VehicleState] | None = None,
    committed: Sequence[tuple[int, int, float]] = (),
    base_ledger: OccupancySchedule | None = None,
) -> tuple[dict[int, VehicleSchedule], float]:
    """Schedule every vehicle listed in ``order``; return schedules and the
    total delay.  Unlisted vehicles only contribute their current cell
    claims."""
    if params is None:
        params = PlannerParams.defaults(grid)
    ctx = PlanningContext(vehicles, grid, params, t_now=t_now,
                          seed_vehicles=seed_vehicles, committed=committed,
                          base_ledger=base_ledger)
    state = ctx.initial_state().extend_many(list(order))
    return state.schedules, state.total_delay


def advance_unplanned(
    vehicles: list[VehicleState],
    schedules: dict[int, VehicleSchedule],
    t: float,
    dt: float,
    limits: KinematicLimits,
    safety: SafetyParams,
    following: FollowingParams | None = None,
) -> list[VehicleState]:
    """One time step: scheduled vehicles replay their plans, the rest
    car-follow whatever is ahead of them in their current lane."""
    following = following or FollowingParams()
    queues = lane_queues(vehicles)
    out: list[VehicleState] = []
    for v in vehicles:
        sched = schedules.get(v.id)
        if sched is not None and not sched.deferred and sched.pre is not None:
            lane, p, vel, _ = sched.state_at(t + dt)
            nv = v.copy()
            nv.lane, nv.position, nv.velocity = lane, p, vel
            nv.acceleration = (vel - v.velocity) / dt
            nv.planned = True
            out.append(nv)
            continue
        lane_q = queues[v.lane]
        idx = lane_q.index(v)
        leader = lane_q[idx - 1] if idx > 0 else None
        out.append(car_following_step(v, leader, dt, limits, safety, following))
    return out
