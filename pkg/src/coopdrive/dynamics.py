"""Vehicle state, kinematic limits, gap safety, and car-following.

Longitudinal motion is one-dimensional per lane; positions grow in the
direction of travel and are shared across lanes (parallel lanes).
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, replace

from .errors import ConfigError
from .profiles import advance_time


class Action(enum.Enum):
    """What a vehicle intends to do inside the control zone."""

    STRAIGHT = "straight"
    CHANGE_LANE = "change_lane"

    def __repr__(self) -> str:  # keeps passing-order reprs compact
        return self.value


@dataclass(frozen=True, slots=True)
class KinematicLimits:
    """Speed/acceleration envelope plus comfort-braking magnitudes."""

    v_min: float = 0.0
    v_max: float = 20.0
    u_min: float = -4.0
    u_max: float = 3.0
    a_min_brake: float = 3.0
    a_max_brake: float = 6.0

    def __post_init__(self) -> None:
        if self.v_min < 0 or self.v_max <= self.v_min:
            raise ConfigError(f"need 0 <= v_min < v_max, got [{self.v_min}, {self.v_max}]")
        if not (self.u_min < 0.0 < self.u_max):
            raise ConfigError(f"need u_min < 0 < u_max, got [{self.u_min}, {self.u_max}]")
        if not (0.0 < self.a_min_brake <= self.a_max_brake):
            raise ConfigError(
                f"need 0 < a_min_brake <= a_max_brake, got "
                f"[{self.a_min_brake}, {self.a_max_brake}]")


@dataclass(frozen=True, slots=True)
class SafetyParams:
    """cell_headway: minimum spacing of arrival times at one cell.
    time_headway: reaction-time term of the spacing rule."""

    cell_headway: float = 1.0
    time_headway: float = 0.5

    def __post_init__(self) -> None:
        if self.cell_headway <= 0 or self.time_headway <= 0:
            raise ConfigError("headways must be positive")


@dataclass(slots=True)
class VehicleState:
    id: int
    lane: int
    position: float
    velocity: float
    acceleration: float = 0.0
    entry_time: float = 0.0
    planned: bool = False
    action: Action = Action.STRAIGHT

    def copy(self) -> "VehicleState":
        return replace(self)


def cell_traversal_time(v: float, u: float, cell_length: float) -> float:
    """Time to cross one cell of given length entered at speed v with constant
    acceleration u. Raises UnreachableCellError when the far edge is never
    reached (stopped with u <= 0, or braking to a halt inside the cell)."""
    if cell_length <= 0:
        raise ConfigError(f"cell_length must be positive, got {cell_length}")
    return advance_time(v, u, cell_length)


def comfort_braking(v: float, limits: KinematicLimits) -> float:
    """Speed-dependent braking magnitude: interpolates from a_min_brake at
    rest to a_max_brake at v_max."""
    frac = min(max(v / limits.v_max, 0.0), 1.0)
    return limits.a_min_brake + frac * (limits.a_max_brake - limits.a_min_brake)


def safety_gap(v_follow: float, v_lead: float, limits: KinematicLimits,
               time_headway: float) -> float:
    """Minimum safe spacing for a follower at v_follow behind a leader at
    v_lead. May be negative (leader much faster): any gap is then safe."""
    brake = comfort_braking(v_follow, limits)
    return (v_follow * time_headway
            + v_follow * v_follow / (2.0 * brake)
            - v_lead * v_lead / (2.0 * limits.a_max_brake))


@functools.lru_cache(maxsize=None)
def _stop_reserve(v: float, limits: KinematicLimits, time_headway: float,
                  dt: float) -> float:
    dip = 0.0
    run = 0.0
    while v > 1e-9:
        v2 = max(0.0, v - limits.a_max_brake * dt)
        run += (0.5 * (v + v2) * dt
                - safety_gap(v, 0.0, limits, time_headway)
                + safety_gap(v2, 0.0, limits, time_headway))
        if run > dip:
            dip = run
        v = v2
    return dip


def hard_stop_reserve(v: float, limits: KinematicLimits, time_headway: float,
                      dt: float) -> float:
    """Margin a full-authority stop from speed v can transiently consume.

    The spacing rule prices the follower's stop at its comfort rate, which
    is weaker than a_max_brake, so during the first steps of a hard stop
    the distance shed outruns the shrinking requirement and the margin
    sinks before the speed loss catches up.  A state whose spacing margin
    exceeds this reserve keeps the rule satisfied at every step of a hard
    stop regardless of what the leader does.  Zero at low speeds, a few
    decimeters near v_max."""
    key = math.ceil(v * 20.0 - 1e-9) / 20.0
    return _stop_reserve(key, limits, time_headway, dt)


def safe_following_speed(gap: float, v_lead: float, limits: KinematicLimits,
                         time_headway: float) -> float:
    """Largest follower speed whose safety gap fits inside ``gap``.

    Inverts the gap rule with the speed-interpolated braking magnitude;
    the interpolation is linear below v_max, which turns the inversion
    into an exact quadratic there."""
    reach = gap + v_lead * v_lead / (2.0 * limits.a_max_brake)
    if reach <= 0.0:
        return 0.0
    a0 = limits.a_min_brake
    s = (limits.a_max_brake - limits.a_min_brake) / limits.v_max
    rho = time_headway
    qa = s * rho + 0.5
    qb = a0 * rho - reach * s
    v = (-qb + math.sqrt(qb * qb + 4.0 * qa * reach * a0)) / (2.0 * qa)
    return min(v, limits.v_max)


def is_lane_change_safe(ego: VehicleState, neighbors: list[VehicleState],
                        limits: KinematicLimits, safety: SafetyParams,
                        *, factor: float = 1.0, buffer: float = 0.0) -> bool:
    """Gap test for starting a lane change now, against the destination-lane
    leader/follower and the current-lane leader.

    Every (follower, leader) pair the maneuver creates must satisfy
    d >= factor * F + buffer. Vehicles at identical positions fail.
    """
    for other in neighbors:
        d = other.position - ego.position
        if d >= 0.0:
            need = safety_gap(ego.velocity, other.velocity, limits,
                              safety.time_headway)
        else:
            d = -d
            need = safety_gap(other.velocity, ego.velocity, limits,
                              safety.time_headway)
        if d < factor * need + buffer or d == 0.0:
            return False
    return True


@dataclass(frozen=True, slots=True)
class FollowingParams:
    """Car-following controller knobs. model is "gap" (proportional controller
    on the safety-gap spacing) or "newell" (trailing the leader's trajectory
    by a space/time displacement)."""

    model: str = "gap"
    gain: float = 0.6
    standstill_margin: float = 1.0
    hard_buffer: float = 0.25
    approach_headway: float = 1.0
    newell_tau: float = 1.2
    newell_delta: float = 7.0

    def __post_init__(self) -> None:
        if self.model not in ("gap", "newell"):
            raise ConfigError(f"unknown car-following model {self.model!r}")


def car_following_step(follower: VehicleState, leader: VehicleState | None,
                       dt: float, limits: KinematicLimits, safety: SafetyParams,
                       params: FollowingParams = FollowingParams(),
                       ) -> VehicleState:
    """Advance the follower one step toward its desired spacing.

    Desired speed is clamped by the inverse of the gap rule evaluated
    against a worst-case (hard-braking) leader, so the spacing rule keeps
    holding step over step; braking escalates past the comfort limit when
    that clamp cannot be met otherwise."""
    v = follower.velocity
    a_floor = limits.u_min
    if leader is None:
        v_des = limits.v_max
    else:
        gap = leader.position - follower.position
        need = safety_gap(v, leader.velocity, limits, safety.time_headway)
        reserve = hard_stop_reserve(v, limits, safety.time_headway, dt)
        if gap < need + reserve + params.hard_buffer:
            # emergency stop at full braking authority
            v_des = 0.0
            a_floor = -limits.a_max_brake
        elif params.model == "newell":
            v_des = (gap - params.newell_delta) / params.newell_tau
        else:
            want = (max(need, v * safety.cell_headway)
                    + params.standstill_margin
                    + max(0.0, v - leader.velocity) * params.approach_headway)
            v_des = leader.velocity + params.gain * (gap - want)
        # end-of-step certificate: assume the leader brakes hard through this
        # step while we coast; cap speed so the gap rule holds then with the
        # full hard-stop reserve in hand, so an emergency stop begun from the
        # capped state can never sink the margin below zero.  The buffer
        # absorbs grid rounding and the trapezoid mismatch of a single step
        vl_next = max(0.0, leader.velocity - limits.a_max_brake * dt)
        gap_next = (gap + 0.5 * (leader.velocity + vl_next) * dt
                    - v * dt - 0.5 * limits.u_max * dt * dt)
        res_next = hard_stop_reserve(min(v + limits.u_max * dt, limits.v_max),
                                     limits, safety.time_headway, dt)
        cap = safe_following_speed(gap_next - res_next - params.hard_buffer,
                                   vl_next, limits, safety.time_headway)
        if cap < v_des:
            v_des = cap
        # the comfort floor must never override the certificate: escalate to
        # full braking whenever comfort braking cannot get under the cap
        if cap < v + a_floor * dt:
            a_floor = -limits.a_max_brake
    v_des = min(max(v_des, 0.0), limits.v_max)
    a = min(max((v_des - v) / dt, a_floor), limits.u_max)
    v_new = min(max(v + a * dt, max(limits.v_min, 0.0)), limits.v_max)
    p_new = follower.position + 0.5 * (v + v_new) * dt
    out = follower.copy()
    out.position = p_new
    out.velocity = v_new
    out.acceleration = a
    return out
