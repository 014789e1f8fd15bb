"""Closed-loop traffic experiments around the work zone.

Demand arrives as per-lane Poisson processes and queues at the zone
entrance; the queue head is released once the spacing rule allows.  Inside
the zone each vehicle either replays its latest plan or car-follows, and a
live cell ledger gates every boundary crossing so executed motion obeys
the same arrival-spacing rule the planner scheduled against.  Replans run
on a fixed cadence, skipping vehicles mid-way through a lane change (their
remaining cell claims are passed through as commitments instead).
"""

from __future__ import annotations

import dataclasses
import math
import time as _time
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .config import ScenarioConfig
from .dynamics import (Action, FollowingParams, KinematicLimits, SafetyParams,
                       VehicleState, car_following_step, hard_stop_reserve,
                       is_lane_change_safe, safety_gap)
from .errors import ConfigError, SafetyViolationError
from .interpreter import PlannerParams, VehicleSchedule, interpret
from .mcts import PlanResult, SearchParams, plan
from .ordering import fifo_order
from .profiles import advance_time
from .road import CellGrid, OccupancySchedule

_ARRIVAL_STREAM = 11
_SNAPSHOT_STREAM = 23

STRATEGIES = ("fifo", "bi_level")


def vehicle_delay(t_pass: float, t_free: float) -> float:
    """Delay of one trip: actual passing time minus the free-flow passing
    time.  Slightly-early artifacts round to zero; materially early is a
    consistency bug and raises."""
    if t_pass < t_free - 1e-6:
        raise ValueError(
            f"passing time {t_pass} precedes free-flow bound {t_free}")
    return max(0.0, t_pass - t_free)


def improvement_ratio(j_baseline: float, j_plan: float) -> float:
    """Relative delay saved against the baseline.  Zero baseline with zero
    plan delay counts as no improvement; zero baseline with positive plan
    delay has no meaningful ratio and raises."""
    if j_baseline <= 1e-12:
        if j_plan <= 1e-12:
            return 0.0
        raise ValueError(
            f"baseline delay is zero but plan delay is {j_plan}")
    return (j_baseline - j_plan) / j_baseline


@dataclass(frozen=True, slots=True)
class ArrivalProcess:
    """Poisson demand split equally over the lanes, reproducible per seed.
    Each lane draws from its own substream, so one lane's horizon never
    shifts another lane's arrivals."""

    rate: float  # veh/h summed over all lanes
    lane_count: int
    seed: int

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ConfigError(f"demand rate must be >= 0, got {self.rate}")
        if self.lane_count < 1:
            raise ConfigError("lane_count must be >= 1")

    def _rng(self, lane: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, _ARRIVAL_STREAM, lane]))

    def mean_gap(self) -> float:
        return 3600.0 * self.lane_count / self.rate

    def gaps(self, lane: int, n: int) -> np.ndarray:
        """First n inter-arrival gaps of one lane's stream."""
        if not 0 <= lane < self.lane_count:
            raise ConfigError(f"lane {lane} out of range")
        if self.rate <= 0:
            raise ConfigError("no arrivals at zero demand")
        return self._rng(lane).exponential(self.mean_gap(), size=n)

    def times(self, lane: int, horizon: float) -> list[float]:
        """Arrival timestamps for one lane up to the horizon."""
        if self.rate <= 0 or horizon <= 0:
            return []
        mean = self.mean_gap()
        rng = self._rng(lane)
        out: list[float] = []
        t = 0.0
        chunk = max(16, int(horizon / mean) + 8)
        while True:
            for g in rng.exponential(mean, size=chunk):
                t += g
                if t > horizon:
                    return out
                out.append(t)


@dataclass
class Metrics:
    strategy: str
    rate: float
    duration: float
    seed: int
    spawned: int = 0
    entered: int = 0
    passed: int = 0
    remaining_zone: int = 0
    remaining_queue: int = 0
    total_delay: float = 0.0
    avg_delay: float = 0.0
    delays: dict[int, float] = field(default_factory=dict)
    cell_gap_violations: int = 0
    spacing_violations: int = 0
    gate_clamps: int = 0
    queue_peak: int = 0
    plans: int = 0
    plan_nodes: int = 0
    wall_time: float = 0.0


@dataclass
class RunResult:
    metrics: Metrics
    crossings: list[tuple[float, int, int, int]]  # (time, vehicle, lane, cell)
    trajectories: list[tuple[float, int, int, float, float]]
    plan_log: list[dict]


class _SimVehicle:
    __slots__ = ("id", "lane", "spawn_lane", "position", "velocity", "accel",
                 "spawn_time", "entry_time", "schedule", "broken",
                 "started_maneuver")

    def __init__(self, vid: int, lane: int, spawn_time: float,
                 entry_time: float, velocity: float):
        self.id = vid
        self.lane = lane
        self.spawn_lane = lane
        self.position = 0.0
        self.velocity = velocity
        self.accel = 0.0
        self.spawn_time = spawn_time
        self.entry_time = entry_time
        self.schedule: VehicleSchedule | None = None
        self.broken = False
        self.started_maneuver = False

    def proxy(self) -> VehicleState:
        return VehicleState(id=self.id, lane=self.lane, position=self.position,
                            velocity=self.velocity, acceleration=self.accel,
                            entry_time=self.entry_time)


def _window(sched: VehicleSchedule | None) -> tuple[float, float] | None:
    if (sched is None or sched.trajectory is None
            or sched.maneuver_start is None):
        return None
    return sched.maneuver_start, sched.maneuver_start + sched.trajectory.total_duration


class _Engine:
    def __init__(self, scenario: ScenarioConfig, strategy: str, *,
                 rate: float, duration: float, seed: int,
                 record_trajectories: bool, sample_interval: float):
        if strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
        if duration <= 0:
            raise ConfigError("duration must be positive")
        self.scenario = scenario
        self.strategy = strategy
        self.rate = rate
        self.duration = duration
        self.seed = seed
        self.grid: CellGrid = scenario.grid()
        self.pp: PlannerParams = scenario.planner_params(self.grid)
        # reproducibility: in-loop planning is bounded by node count only
        self.search = dataclasses.replace(scenario.search, time_budget=math.inf)
        self.limits: KinematicLimits = scenario.limits
        self.safety: SafetyParams = scenario.safety
        self.following: FollowingParams = scenario.following
        self.sim = scenario.sim
        self.dt = self.sim.dt
        self.headway = self.safety.cell_headway
        self.live = OccupancySchedule(self.grid)
        # planned boundary arrivals of currently replaying vehicles, so
        # car-following traffic sees a merge coming before it is executed
        self.res_claims: dict[tuple[int, int], list[float]] = {}
        self.active: list[_SimVehicle] = []
        self.events = True
        self.record_trajectories = record_trajectories
        self.sample_every = max(1, int(round(sample_interval / self.dt)))
        self.metrics = Metrics(strategy=strategy, rate=rate,
                               duration=duration, seed=seed)
        self.crossings: list[tuple[float, int, int, int]] = []
        self.trajectories: list[tuple[float, int, int, float, float]] = []
        self.plan_log: list[dict] = []
        self.free_time = self.grid.length / self.limits.v_max
        # entrance wall per lane for vehicles without a route around a block
        self.walls: list[float | None] = []
        for lane in range(self.grid.lane_count):
            blk = self.grid.first_blocked_at_or_after(lane, 0)
            self.walls.append(None if blk is None else self.grid.boundary(blk))

    # ---- demand ----------------------------------------------------------

    def _spawn_tables(self) -> None:
        arr = ArrivalProcess(self.rate, self.grid.lane_count, self.seed)
        self.spawns = [arr.times(lane, self.duration)
                       for lane in range(self.grid.lane_count)]
        self.spawn_ptr = [0] * self.grid.lane_count
        self.metrics.spawned = sum(len(s) for s in self.spawns)
        self.next_id = 0

    def _release(self, t: float) -> None:
        index: list[list[tuple[float, _SimVehicle]]] | None = None
        for lane in range(self.grid.lane_count):
            times = self.spawns[lane]
            i = self.spawn_ptr[lane]
            if i >= len(times) or times[i] > t + 1e-9:
                continue
            if self.live.get(lane, 0) + self.headway > t + 1e-9:
                continue
            lead = self._scan_ahead(lane, -1e-9, t)
            if lead is not None:
                need = safety_gap(self.limits.v_max, lead.velocity,
                                  self.limits, self.safety.time_headway)
                if lead.position < need + self.sim.entry_margin:
                    continue
            veh = _SimVehicle(self.next_id, lane, times[i], t, self.limits.v_max)
            # entering at full speed is a commitment: every claimed boundary
            # within the stopping envelope must already be meetable, else a
            # change planned into this lane before the vehicle existed would
            # force an early crossing it cannot brake out of
            if index is None:
                index = self._index(t)
            if not self._claims_feasible(veh, (lane,), t, index):
                continue
            self.next_id += 1
            self.spawn_ptr[lane] = i + 1
            self.active.append(veh)
            self.live.record(lane, 0, t)
            self.crossings.append((t, veh.id, lane, 0))
            self.metrics.entered += 1
            self.events = True

    def _queue_len(self, t: float) -> int:
        total = 0
        for lane in range(self.grid.lane_count):
            total += bisect_right(self.spawns[lane], t) - self.spawn_ptr[lane]
        return total

    # ---- lane bookkeeping ------------------------------------------------

    def _lanes_of(self, v: _SimVehicle, t: float) -> tuple[int, ...]:
        """Lanes a vehicle occupies at time t; two while changing."""
        if v.started_maneuver and v.schedule is not None:
            win = _window(v.schedule)
            if win is not None and win[0] - 1e-9 <= t < win[1] - 1e-9:
                r = v.schedule.route
                return (r.origin_lane, r.dest_lane)
        return (v.lane,)

    def _gap_lanes(self, v: _SimVehicle, t: float) -> tuple[int, ...]:
        """Lanes whose leaders the vehicle must keep a full braking gap to.

        Cell bookkeeping treats a changing vehicle as occupying both lanes
        for the whole maneuver, but the following relation tracks where the
        body actually is: both lanes while still mostly in the origin lane,
        only the destination lane once the midpoint is crossed.  Without
        the split, a vehicle pulling out around a stopped queue would be
        held to the stopped queue's gap long after it has left the lane.
        """
        if v.started_maneuver and v.schedule is not None:
            win = _window(v.schedule)
            if win is not None and win[0] - 1e-9 <= t < win[1] - 1e-9:
                r = v.schedule.route
                if t < 0.5 * (win[0] + win[1]):
                    return (r.origin_lane, r.dest_lane)
                return (r.dest_lane,)
        return (v.lane,)

    def _index(self, t: float) -> list[list[tuple[float, _SimVehicle]]]:
        idx: list[list[tuple[float, _SimVehicle]]] = [
            [] for _ in range(self.grid.lane_count)]
        for v in self.active:
            for lane in self._lanes_of(v, t):
                idx[lane].append((v.position, v))
        for rows in idx:
            rows.sort(key=lambda pv: (pv[0], pv[1].id))
        return idx

    def _nearest_ahead(self, lanes: tuple[int, ...], position: float,
                       index: list[list[tuple[float, _SimVehicle]]],
                       exclude: int = -1) -> _SimVehicle | None:
        best: _SimVehicle | None = None
        for lane in lanes:
            for p, v in index[lane]:
                if v.id != exclude and p > position + 1e-9:
                    if best is None or p < best.position:
                        best = v
                    break
        return best

    def _leaders_near(self, lane: int, position: float,
                      index: list[list[tuple[float, _SimVehicle]]],
                      exclude: int = -1) -> list[_SimVehicle]:
        """Nearest body ahead in the lane's occupancy row, plus the nearest
        vehicle whose own lane attribute is this lane.

        A vehicle mid-change books cells in both lanes while its body is
        mostly elsewhere; following only the nearest booking would let a
        stopped vehicle hide behind a departing one until the departer's
        lane flips and the gap is already gone."""
        first: _SimVehicle | None = None
        major: _SimVehicle | None = None
        for p, w in index[lane]:
            if w.id == exclude or p <= position + 1e-9:
                continue
            if first is None:
                first = w
            if w.lane == lane:
                major = w
                break
        out = [first] if first is not None else []
        if major is not None and major is not first:
            out.append(major)
        return out

    def _scan_ahead(self, lane: int, position: float, t: float
                    ) -> _SimVehicle | None:
        best: _SimVehicle | None = None
        for v in self.active:
            if v.position > position + 1e-9 and lane in self._lanes_of(v, t):
                if best is None or v.position < best.position:
                    best = v
        return best

    # ---- replanning ------------------------------------------------------

    def _committed_claims(self, v: _SimVehicle, t: float
                          ) -> list[tuple[int, int, float]]:
        out: list[tuple[int, int, float]] = []
        cell = self.grid.cell_at(v.position)
        if v.position < self.grid.length:
            for lane in self._lanes_of(v, t):
                out.append((lane, cell, t))
        s = v.schedule
        if s is not None and s.route is not None and not v.broken:
            for step, arr in zip(s.route.steps, s.arrivals):
                if arr >= t - self.headway:
                    out.extend((lane, c, arr) for lane, c in step)
        return out

    def _replan(self, t: float) -> None:
        if not self.active:
            return
        standing = any(vv.schedule is None or vv.broken for vv in self.active)
        if self.sim.replan_on_events_only and not (self.events or standing):
            return
        plannable: list[_SimVehicle] = []
        committed: list[tuple[int, int, float]] = []
        for v in sorted(self.active, key=lambda x: (-x.position, x.id)):
            win = _window(v.schedule)
            mid = (v.started_maneuver and win is not None
                   and win[0] - 1e-9 <= t < win[1] - 1e-9)
            if mid:
                committed.extend(self._committed_claims(v, t))
            else:
                plannable.append(v)
        snapshot_vs = plannable[:self.sim.max_planned]
        capped = plannable[self.sim.max_planned:]
        if not snapshot_vs:
            self.events = False
            return
        states = [v.proxy() for v in snapshot_vs]
        seeds = states + [v.proxy() for v in capped]
        if self.strategy == "bi_level":
            res: PlanResult = plan(states, self.grid, self.pp, self.search,
                                   t_now=t, seed_vehicles=seeds,
                                   committed=tuple(committed),
                                   base_ledger=self.live)
            schedules = res.schedules
            self.metrics.plan_nodes += res.nodes_expanded
            self.plan_log.append({
                "t": t, "n_vehicles": len(states), "j_fifo": res.j_fifo,
                "objective": res.objective, "nodes": res.nodes_expanded,
            })
        else:
            order = fifo_order(states, self.grid)
            schedules, j = interpret(order, states, self.grid, self.pp,
                                     t_now=t, seed_vehicles=seeds,
                                     committed=tuple(committed),
                                     base_ledger=self.live)
            self.plan_log.append({
                "t": t, "n_vehicles": len(states), "j_fifo": j,
                "objective": j, "nodes": 0,
            })
        for v in snapshot_vs:
            sched = schedules.get(v.id)
            if sched is None or sched.deferred or sched.pre is None:
                v.schedule = None
            else:
                v.schedule = sched
            v.broken = False
            v.started_maneuver = False
        # capped-out vehicles keep any older plan; replay checks and the
        # boundary gate catch it if it has gone stale
        self._rebuild_reservations(t)
        self.metrics.plans += 1
        self.events = False

    def _rebuild_reservations(self, t: float) -> None:
        claims: dict[tuple[int, int], list[tuple[float, _SimVehicle]]] = {}
        horizon = t - self.headway
        for v in self.active:
            s = v.schedule
            if s is None or v.broken or s.route is None:
                continue
            for step, arr in zip(s.route.steps, s.arrivals):
                if arr >= horizon:
                    for lane, cell in step:
                        claims.setdefault((lane, cell), []).append((arr, v))
        for row in claims.values():
            row.sort(key=lambda aw: aw[0])
        self.res_claims = claims

    def _boundary_allowed(self, v: _SimVehicle, lanes: tuple[int, ...],
                          cell: int, t_est: float, t: float,
                          leads: dict[int, _SimVehicle | None]) -> float:
        """Earliest crossing time at or after the estimate ``t_est`` that
        keeps the arrival-spacing rule against recorded crossings, the
        planned arrivals of replaying vehicles physically ahead, and the
        leader that has not reached this boundary yet.  A planned claim is
        an exclusion window around its arrival; crossing clearly before
        the window is fine, otherwise the crossing waits until it closes.
        Claims owned by vehicles behind never constrain: their own
        discipline keeps them clear of whatever this vehicle records.  The
        leader bound uses the earliest crossing its kinematics still
        allow, so it never waits on something that could not happen, and
        it tracks leaders that fell off their plans and crawl.  The pad
        keeps recorded crossings (chord-interpolated within a step) from
        landing a few milliseconds inside the rule."""
        h = self.headway
        pad = 0.05
        b = self.grid.boundary(cell)
        t_a = t_est
        for lane in lanes:
            t_a = max(t_a, self.live.get(lane, cell) + h + pad)
            lead = leads.get(lane)
            if lead is not None and lead.position < b - 1e-9:
                t_lead = t + advance_time(lead.velocity, self.limits.u_max,
                                          b - lead.position)
                t_a = max(t_a, t_lead + h + pad)
        claims: list[float] = []
        for lane in lanes:
            row = self.res_claims.get((lane, cell))
            if row:
                claims.extend(
                    arr for arr, w in row
                    if w.id != v.id and w.position > v.position + 1e-6)
        if claims:
            claims.sort()
            for c in claims:
                if t_a <= c - 1.5 * h:
                    break
                if t_a < c + h + pad:
                    t_a = c + h + pad
        return t_a

    def _leads_of(self, v: _SimVehicle, lanes: tuple[int, ...],
                  index: list[list[tuple[float, _SimVehicle]]]
                  ) -> dict[int, _SimVehicle | None]:
        return {lane: self._nearest_ahead((lane,), v.position, index,
                                          exclude=v.id)
                for lane in lanes}

    def _pace_boundary(self, v: _SimVehicle, lanes: tuple[int, ...], t: float,
                       v_new: float,
                       index: list[list[tuple[float, _SimVehicle]]]) -> float:
        """Cap the end-of-step speed so no upcoming boundary is crossed
        before its allowed time: pace toward each opening from afar and
        hold the ability to stop short of its line with real braking
        authority, dropping a hold once even a full-throttle run could no
        longer beat that opening.  Every boundary inside the current
        stopping envelope is checked, not just the next one, so a claim a
        few cells downstream starts shaping speed while stopping for it is
        still possible."""
        cpl = self.grid.cells_per_lane
        k = self.grid.first_cell_ahead(v.position)
        if k >= cpl:
            return v_new
        beta = self.limits.a_max_brake
        leads = self._leads_of(v, lanes, index)
        horizon = (v.velocity * v.velocity / (2.0 * beta)
                   + 2.0 * self.grid.cell_length)
        while k < cpl:
            d = self.grid.boundary(k) - v.position
            if d > horizon:
                break
            t_est = t + d / max(v_new, 0.1)
            t_a = self._boundary_allowed(v, lanes, k, t_est, t, leads)
            if t_a > t_est + 1e-9:
                rem = t_a - t
                if advance_time(v.velocity, self.limits.u_max, d) < rem - 1e-9:
                    v_cap = min(d / rem,
                                math.sqrt(max(0.0, 2.0 * beta * (d - 0.05))))
                    if v_cap < v_new:
                        v_new = max(v_cap, v.velocity - beta * self.dt, 0.0)
            k += 1
        return v_new

    # ---- one execution step ----------------------------------------------

    def _claims_feasible(self, v: _SimVehicle, lanes: tuple[int, ...],
                         t: float,
                         index: list[list[tuple[float, _SimVehicle]]]) -> bool:
        """Whether every boundary claim inside the stopping envelope can
        still be honored from the current state.  A maneuver that starts
        against an unmeetable window would have to cross a boundary early
        or slam mid-change, so refuse the start and let the next replan
        route around it."""
        cpl = self.grid.cells_per_lane
        k = self.grid.first_cell_ahead(v.position)
        beta = self.limits.a_max_brake
        leads = self._leads_of(v, lanes, index)
        horizon = (v.velocity * v.velocity / (2.0 * beta)
                   + 2.0 * self.grid.cell_length)
        while k < cpl:
            d = self.grid.boundary(k) - v.position
            if d > horizon:
                break
            t_est = t + d / max(v.velocity, 0.1)
            t_a = self._boundary_allowed(v, lanes, k, t_est, t, leads)
            if t_a > t_est + 1e-9:
                if advance_time(v.velocity, self.limits.u_max, d) < t_a - t - 1e-9:
                    if v.velocity > math.sqrt(
                            max(0.0, 2.0 * beta * (d - 0.05))) + 1e-9:
                        return False
            k += 1
        return True

    def _commit_ok(self, v: _SimVehicle,
                   index: list[list[tuple[float, _SimVehicle]]],
                   t: float) -> bool:
        r = v.schedule.route
        if not self._claims_feasible(v, (r.origin_lane, r.dest_lane), t, index):
            return False
        neighbors: list[VehicleState] = []
        for lane in (r.origin_lane, r.dest_lane):
            for lead in self._leaders_near(lane, v.position, index, v.id):
                if all(s.id != lead.id for s in neighbors):
                    neighbors.append(lead.proxy())
        tail_best = None
        for p, w in index[r.dest_lane]:
            if w.id != v.id and p <= v.position + 1e-9:
                if tail_best is None or p > tail_best.position:
                    tail_best = w
        if tail_best is not None:
            neighbors.append(tail_best.proxy())
            # the trailing vehicle must also be able to brake clear of the
            # claimed cells: its unavoidable boundary arrivals have to stay
            # one headway behind the plan, or the change cannot start
            sched = v.schedule
            if sched.arrivals:
                beta = self.limits.a_max_brake
                idxs = list(r.maneuver_steps())
                if idxs and idxs[-1] + 1 < len(r.steps):
                    idxs.append(idxs[-1] + 1)
                for i in idxs:
                    b = r.boundaries[i]
                    d = b - tail_best.position
                    if d <= 0.0:
                        continue
                    vt = tail_best.velocity
                    if vt * vt <= 2.0 * beta * max(0.0, d - 0.05):
                        break
                    t_force = t + (vt - math.sqrt(
                        max(0.0, vt * vt - 2.0 * beta * d))) / beta
                    if sched.arrivals[i] + self.headway + 0.05 > t_force:
                        return False
        # the change must leave every new (follower, leader) pair enough
        # margin to absorb a hard stop begun at the moment of commitment
        v_f = v.velocity
        if tail_best is not None:
            v_f = max(v_f, tail_best.velocity)
        buf = (hard_stop_reserve(v_f, self.limits, self.safety.time_headway,
                                 self.dt) + self.following.hard_buffer)
        return is_lane_change_safe(v.proxy(), neighbors, self.limits,
                                   self.safety, buffer=buf)

    def _replay_safe(self, v: _SimVehicle, lanes: tuple[int, ...], p_c: float,
                     vel_c: float,
                     index: list[list[tuple[float, _SimVehicle]]]) -> bool:
        dt = self.dt
        reserve = (hard_stop_reserve(vel_c, self.limits,
                                     self.safety.time_headway, dt)
                   + self.following.hard_buffer)
        for lane in lanes:
            for lead in self._leaders_near(lane, v.position, index, v.id):
                vl = lead.velocity
                vl_next = max(0.0, vl - self.limits.a_max_brake * dt)
                gap_next = lead.position + 0.5 * (vl + vl_next) * dt - p_c
                need = safety_gap(vel_c, vl_next, self.limits,
                                  self.safety.time_headway)
                if gap_next < need + reserve:
                    return False
        return True

    def _follow(self, v: _SimVehicle, t: float,
                index: list[list[tuple[float, _SimVehicle]]]
                ) -> tuple[int, float, float]:
        lanes = self._lanes_of(v, t)
        gl = tuple(dict.fromkeys(
            self._gap_lanes(v, t) + self._gap_lanes(v, t + self.dt)))
        # every lane binds on its own; the nearest leader in one lane can
        # be fast and harmless while a farther one in the other lane is a
        # standing queue, so take whichever forces the slowest step
        leaders: list[VehicleState] = []
        for lane in gl:
            states = [w.proxy()
                      for w in self._leaders_near(lane, v.position, index, v.id)]
            # a blocked lane with no plan around it ends at a hard wall
            wall = self.walls[lane]
            if wall is not None and v.position < wall:
                states.append(VehicleState(id=-1, lane=lane, position=wall,
                                           velocity=0.0))
            for state in states:
                if all(s.id != state.id or s.lane != state.lane
                       for s in leaders):
                    leaders.append(state)
        res = None
        for state in leaders or [None]:
            step = car_following_step(v.proxy(), state, self.dt, self.limits,
                                      self.safety, self.following)
            if res is None or step.velocity < res.velocity:
                res = step
        p_new, v_new = res.position, res.velocity
        capped = self._pace_boundary(v, lanes, t, v_new, index)
        if capped < v_new:
            v_new = capped
            p_new = v.position + 0.5 * (v.velocity + v_new) * self.dt
        lane_now = v.lane
        win = _window(v.schedule)
        if v.started_maneuver and win is not None and v.schedule.route is not None:
            # lateral motion keeps its own clock even when longitudinal
            # tracking was abandoned; the lane attribute flips mid-window
            if t + self.dt >= 0.5 * (win[0] + win[1]):
                lane_now = v.schedule.route.dest_lane
            else:
                lane_now = v.schedule.route.origin_lane
        return lane_now, p_new, v_new

    def _gate(self, v: _SimVehicle, lanes: tuple[int, ...], p_c: float,
              vel_c: float, t: float) -> tuple[float, float, bool]:
        p0 = v.position
        if p_c <= p0 + 1e-12:
            return p_c, vel_c, False
        cl = self.grid.cell_length
        k = int(p0 / cl + 1e-9) + 1
        while k < self.grid.cells_per_lane and self.grid.boundary(k) <= p_c + 1e-12:
            b = self.grid.boundary(k)
            allowed = max(self.live.get(l, k) for l in lanes) + self.headway
            t_cross = t + self.dt * (b - p0) / (p_c - p0)
            if t_cross + 1e-9 < allowed:
                p_c = max(p0, b - 0.01)
                vel_c = max(0.0, min(vel_c, 2.0 * (p_c - p0) / self.dt - v.velocity))
                return p_c, vel_c, True
            k += 1
        return p_c, vel_c, False

    def _record_crossings(self, v: _SimVehicle, lanes: tuple[int, ...],
                          p0: float, p_c: float, t: float) -> None:
        if p_c <= p0 + 1e-12:
            return
        cl = self.grid.cell_length
        k = int(p0 / cl + 1e-9) + 1
        while k < self.grid.cells_per_lane and self.grid.boundary(k) <= p_c + 1e-12:
            t_cross = t + self.dt * (self.grid.boundary(k) - p0) / (p_c - p0)
            for lane in lanes:
                if t_cross < self.live.get(lane, k) + self.headway - 1e-6:
                    self.metrics.cell_gap_violations += 1
                self.live.record(lane, k, t_cross)
                self.crossings.append((t_cross, v.id, lane, k))
            k += 1

    def _advance(self, t: float) -> None:
        dt = self.dt
        index = self._index(t)
        survivors: list[_SimVehicle] = []
        for v in sorted(self.active, key=lambda x: (-x.position, x.id)):
            sched = v.schedule
            replay = sched is not None and not v.broken
            if replay and sched.trajectory is not None and not v.started_maneuver:
                ms = sched.maneuver_start
                if ms is not None and t + dt > ms + 1e-9:
                    if self._commit_ok(v, index, t):
                        v.started_maneuver = True
                    else:
                        v.broken = True
                        replay = False
                        self.events = True
            cand: tuple[int, float, float] | None = None
            if replay:
                lane_c, p_prof, _v_prof, _ = sched.state_at(t + dt)
                step_lanes = tuple(dict.fromkeys(
                    self._lanes_of(v, t) + self._lanes_of(v, t + dt) + (lane_c,)))
                # pursue the planned profile with real actuation limits: land
                # on it exactly when nothing binds, catch up at full throttle
                # after any constrained step, never brake beyond authority
                v0 = v.velocity
                v_t = 2.0 * (p_prof - v.position) / dt - v0
                v_t = min(v_t, v0 + self.limits.u_max * dt, self.limits.v_max)
                v_t = max(v_t, v0 - self.limits.a_max_brake * dt, 0.0)
                vel_c = self._pace_boundary(v, step_lanes, t, v_t, index)
                p_c = v.position + 0.5 * (v0 + vel_c) * dt
                gap_lanes = tuple(dict.fromkeys(
                    self._gap_lanes(v, t) + self._gap_lanes(v, t + dt)))
                if self._replay_safe(v, gap_lanes, p_c, vel_c, index):
                    cand = (lane_c, p_c, vel_c)
                else:
                    v.broken = True
                    self.events = True
            if cand is None:
                cand = self._follow(v, t, index)
                step_lanes = tuple(dict.fromkeys(
                    self._lanes_of(v, t) + self._lanes_of(v, t + dt) + (cand[0],)))
            lane_new, p_c, vel_c = cand
            p_c, vel_c, clamped = self._gate(v, step_lanes, p_c, vel_c, t)
            if clamped:
                self.metrics.gate_clamps += 1
                if v.schedule is not None and not v.broken:
                    v.broken = True
                self.events = True
            p0 = v.position
            self._record_crossings(v, step_lanes, p0, p_c, t)
            v.accel = (vel_c - v.velocity) / dt
            v.lane, v.position, v.velocity = lane_new, p_c, vel_c
            if p_c >= self.grid.length - 1e-9:
                if p_c > p0:
                    t_pass = t + dt * (self.grid.length - p0) / (p_c - p0)
                else:
                    t_pass = t + dt
                t_pass = min(max(t_pass, t), t + dt)
                d = vehicle_delay(t_pass, v.spawn_time + self.free_time)
                self.metrics.delays[v.id] = d
                self.metrics.total_delay += d
                self.metrics.passed += 1
                self.events = True
            else:
                survivors.append(v)
        self.active = survivors

    def _audit(self, t: float) -> None:
        # gap accounting follows the lane the body is mostly in (the lane
        # attribute flips at the maneuver midpoint); cell bookkeeping stays
        # dual for the whole maneuver and is audited at recording time
        idx: list[list[tuple[float, _SimVehicle]]] = [
            [] for _ in range(self.grid.lane_count)]
        for v in self.active:
            idx[v.lane].append((v.position, v))
        for rows in idx:
            rows.sort(key=lambda pv: (pv[0], pv[1].id))
            for (pf, vf), (pl, vl) in zip(rows, rows[1:]):
                d = pl - pf
                if vf.id == vl.id:
                    continue
                if d < 0.05:
                    raise SafetyViolationError(
                        f"vehicles {vf.id} and {vl.id} overlap at {pl:.2f} m",
                        time=t, vehicles=(vf.id, vl.id))
                need = safety_gap(vf.velocity, vl.velocity, self.limits,
                                  self.safety.time_headway)
                if d < need - 1e-6:
                    self.metrics.spacing_violations += 1

    # ---- main loop ---------------------------------------------------------

    def run(self) -> RunResult:
        started = _time.perf_counter()
        self._spawn_tables()
        steps = int(round(self.duration / self.dt))
        replan_every = max(1, int(round(self.sim.replan_interval / self.dt)))
        for k in range(steps):
            t = k * self.dt
            self._release(t)
            if k % replan_every == 0:
                self._replan(t)
            self._advance(t)
            self._audit(t + self.dt)
            self.metrics.queue_peak = max(self.metrics.queue_peak,
                                          self._queue_len(t))
            if self.record_trajectories and k % self.sample_every == 0:
                self.trajectories.extend(
                    (t + self.dt, v.id, v.lane, v.position, v.velocity)
                    for v in self.active)
        m = self.metrics
        m.remaining_zone = len(self.active)
        m.remaining_queue = m.spawned - m.entered
        m.avg_delay = m.total_delay / m.passed if m.passed else 0.0
        m.wall_time = _time.perf_counter() - started
        return RunResult(metrics=m, crossings=self.crossings,
                         trajectories=self.trajectories, plan_log=self.plan_log)


def run(scenario: ScenarioConfig, strategy: str, *, rate: float,
        duration: float, seed: int, record_trajectories: bool = False,
        sample_interval: float = 0.5) -> RunResult:
    """One closed-loop experiment.  Raises SafetyViolationError if two
    vehicles ever overlap; softer rule breaches only count in the metrics."""
    eng = _Engine(scenario, strategy, rate=rate, duration=duration, seed=seed,
                  record_trajectories=record_trajectories,
                  sample_interval=sample_interval)
    return eng.run()


# ---- planning-instance helpers ---------------------------------------------


def snapshot_vehicles(grid: CellGrid, limits: KinematicLimits,
                      safety: SafetyParams, n_vehicles: int, seed: int, *,
                      upstream_frac: float = 0.5,
                      speed_range: tuple[float, float] = (0.5, 1.0),
                      spacing_slack: tuple[float, float] = (0.5, 8.0),
                      ) -> list[VehicleState]:
    """A reproducible mid-zone planning instance: random lanes and speeds,
    spacings drawn above the safety gap so the state is feasible as-is."""
    if n_vehicles < 1:
        raise ConfigError("n_vehicles must be >= 1")
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, _SNAPSHOT_STREAM]))
    hi = upstream_frac * grid.length
    frontier: list[float | None] = [None] * grid.lane_count
    tail_speed = [0.0] * grid.lane_count
    out: list[VehicleState] = []
    for i in range(n_vehicles):
        lane = int(rng.integers(grid.lane_count))
        v = float(rng.uniform(*speed_range)) * limits.v_max
        slack = float(rng.uniform(*spacing_slack))
        order = [lane] + sorted((l for l in range(grid.lane_count) if l != lane),
                                key=lambda l: -(frontier[l] if frontier[l] is not None else hi))
        placed = False
        for cand in order:
            front = frontier[cand]
            if front is None:
                pos = hi - float(rng.uniform(0.0, 2.0 * grid.cell_length))
            else:
                need = max(safety_gap(v, tail_speed[cand], limits,
                                      safety.time_headway),
                           v * safety.cell_headway)
                pos = front - need - slack
            if pos >= 1.0:
                frontier[cand] = pos
                tail_speed[cand] = v
                out.append(VehicleState(id=i, lane=cand, position=pos,
                                        velocity=v))
                placed = True
                break
        if not placed:
            raise ConfigError(
                f"cannot place {n_vehicles} vehicles in the entry region")
    ranked = sorted(out, key=lambda s: (-s.position, s.id))
    for k, s in enumerate(ranked):
        s.entry_time = 0.001 * k
    return out


def sweep(scenario: ScenarioConfig, axes: dict, seeds: list[int], *,
          n_vehicles: int = 10, duration: float = 600.0) -> list[dict]:
    """Mean improvement ratio over seeds for every cell of the grid spanned
    by ``axes``.  Axes may hold "c", "omega", "budget" (planning-instance
    sweeps) and/or "rate" (closed-loop sweeps); omitted axes pin to the
    scenario's values."""
    known = {"c", "omega", "budget", "rate"}
    unknown = sorted(set(axes) - known)
    if unknown:
        raise ConfigError(f"unknown sweep axes: {', '.join(unknown)}")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    cs = list(axes.get("c", [scenario.search.c]))
    omegas = list(axes.get("omega", [scenario.search.omega]))
    budgets = list(axes.get("budget", [scenario.search.node_budget]))
    rates = list(axes.get("rate", [None]))
    grid = scenario.grid()
    pp = scenario.planner_params(grid)
    rows: list[dict] = []
    for c, omega, budget, rate in product(cs, omegas, budgets, rates):
        search = dataclasses.replace(scenario.search, c=c, omega=omega,
                                     node_budget=budget,
                                     time_budget=math.inf)
        ratios: list[float] = []
        for seed in seeds:
            if rate is None:
                veh = snapshot_vehicles(grid, scenario.limits, scenario.safety,
                                        n_vehicles, seed)
                res = plan(veh, grid, pp, search)
                ratios.append(res.improvement)
            else:
                sc = dataclasses.replace(scenario, search=search)
                base = run(sc, "fifo", rate=rate, duration=duration, seed=seed)
                coop = run(sc, "bi_level", rate=rate, duration=duration,
                           seed=seed)
                ratios.append(improvement_ratio(
                    base.metrics.total_delay, coop.metrics.total_delay))
        row = {"c": c, "omega": omega, "budget": budget,
               "mean_improvement": float(np.mean(ratios)), "n_seeds": len(seeds)}
        if rate is not None:
            row["rate"] = rate
        rows.append(row)
    return rows
