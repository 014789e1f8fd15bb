"""Piecewise constant-acceleration motion profiles.

A profile is an ordered list of segments, each a (t_start, p_start, v_start,
accel, t_end) tuple. Position and velocity are closed-form inside a segment,
so boundary crossings come out of quadratic roots instead of integration.
All speeds stay nonnegative; a segment never moves backwards.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import InfeasibleTargetsError, UnreachableCellError

_EPS = 1e-12
_TIME_TOL = 1e-9


def advance_time(v: float, a: float, d: float) -> float:
    """Time to advance a distance d >= 0 from speed v at constant acceleration a.

    Raises UnreachableCellError if the motion stalls (v == 0 with a <= 0) or
    brakes to a halt before covering d.
    """
    if d <= 0.0:
        return 0.0
    if abs(a) < _EPS:
        if v <= _EPS:
            raise UnreachableCellError(f"stopped with no acceleration, {d:.3f} m short")
        return d / v
    if a > 0.0:
        if v <= _EPS:
            return math.sqrt(2.0 * d / a)
        return (math.sqrt(v * v + 2.0 * a * d) - v) / a
    if v <= _EPS:
        raise UnreachableCellError(f"stopped while braking, {d:.3f} m short")
    disc = v * v + 2.0 * a * d
    if disc < 0.0:
        raise UnreachableCellError(f"braking to a stop {d:.3f} m short")
    return (v - math.sqrt(disc)) / (-a)


class Profile:
    """Immutable piecewise-constant-acceleration trajectory along one axis."""

    __slots__ = ("segments", "t0", "t1", "p1", "v1")

    def __init__(self, segments: Sequence[tuple[float, float, float, float, float]]):
        if not segments:
            raise ValueError("profile needs at least one segment; see as_profile")
        self.segments = tuple(segments)
        first = self.segments[0]
        last = self.segments[-1]
        self.t0 = first[0]
        self.t1 = last[4]
        dt = last[4] - last[0]
        self.p1 = last[1] + last[2] * dt + 0.5 * last[3] * dt * dt
        self.v1 = max(last[2] + last[3] * dt, 0.0)

    def state(self, t: float) -> tuple[float, float]:
        """(position, velocity) at time t; constant-speed extrapolation outside."""
        if t <= self.t0:
            s = self.segments[0]
            return s[1], s[2]
        if t >= self.t1:
            return self.p1 + self.v1 * (t - self.t1), self.v1
        for t0, p0, v0, a, t1 in self.segments:
            if t <= t1:
                dt = t - t0
                return p0 + v0 * dt + 0.5 * a * dt * dt, v0 + a * dt
        return self.p1, self.v1  # unreachable

    def position(self, t: float) -> float:
        return self.state(t)[0]

    def velocity(self, t: float) -> float:
        return self.state(t)[1]

    def crossing_time(self, p: float) -> float:
        """First time the motion strictly passes position p.

        A segment that merely ends at p (a stop exactly on a boundary, or an
        exact-arrival handoff) does not count; the crossing belongs to the
        segment that carries the vehicle beyond it.
        """
        for t0, p0, v0, a, t1 in self.segments:
            dt = t1 - t0
            p_end = p0 + v0 * dt + 0.5 * a * dt * dt
            if p_end > p + 1e-12:
                if p <= p0:
                    return t0
                return t0 + advance_time(v0, a, p - p0)
        if p <= self.p1 + 1e-9:
            return self.t1
        if self.v1 > _EPS:
            return self.t1 + (p - self.p1) / self.v1
        raise UnreachableCellError(f"profile ends at rest before reaching {p:.3f}")

    def crossing_times(self, positions: Sequence[float]) -> list[float]:
        """crossing_time for an ascending position sequence, one segment sweep."""
        out: list[float] = []
        i, n = 0, len(positions)
        for t0, p0, v0, a, t1 in self.segments:
            if i >= n:
                return out
            dt = t1 - t0
            p_end = p0 + v0 * dt + 0.5 * a * dt * dt
            while i < n and p_end > positions[i] + 1e-12:
                p = positions[i]
                out.append(t0 if p <= p0 else t0 + advance_time(v0, a, p - p0))
                i += 1
        while i < n:
            p = positions[i]
            if p <= self.p1 + 1e-9:
                out.append(self.t1)
            elif self.v1 > _EPS:
                out.append(self.t1 + (p - self.p1) / self.v1)
            else:
                raise UnreachableCellError(
                    f"profile ends at rest before reaching {p:.3f}")
            i += 1
        return out


def as_profile(segments: Sequence[tuple[float, float, float, float, float]],
               t0: float, p0: float, v0: float) -> Profile:
    """Profile from segments, or a stationary-state stub when there are none."""
    if not segments:
        return Profile([(t0, p0, max(v0, 0.0), 0.0, t0)])
    return Profile(segments)


def earliest_arrivals(distances, v0: float, v_max: float,
                      u_max: float) -> np.ndarray:
    """Earliest arrival offsets over an array of distances >= 0.

    Maximal-acceleration profile: accelerate at u_max until v_max, then cruise.
    """
    d = np.maximum(np.asarray(distances, dtype=float), 0.0)
    v0 = min(v0, v_max)
    d_acc = (v_max * v_max - v0 * v0) / (2.0 * u_max)
    t_acc = (v_max - v0) / u_max
    out = np.empty_like(d)
    ramp = d <= d_acc
    out[ramp] = (np.sqrt(v0 * v0 + 2.0 * u_max * d[ramp]) - v0) / u_max
    rest = ~ramp
    out[rest] = t_acc + (d[rest] - d_acc) / v_max
    return out


def earliest_arrival(d: float, v0: float, v_max: float, u_max: float) -> float:
    """Scalar form of earliest_arrivals."""
    if d <= 0.0:
        return 0.0
    v0 = min(v0, v_max)
    d_acc = (v_max * v_max - v0 * v0) / (2.0 * u_max)
    if d <= d_acc:
        return (math.sqrt(v0 * v0 + 2.0 * u_max * d) - v0) / u_max
    return (v_max - v0) / u_max + (d - d_acc) / v_max


def min_time_segments(t0: float, p0: float, v0: float, p_end: float,
                      v_max: float, u_max: float) -> list[tuple]:
    """Segments of the maximal-acceleration motion from (t0, p0, v0) to p_end."""
    d = p_end - p0
    if d <= _EPS:
        return []
    v0 = min(v0, v_max)
    d_acc = (v_max * v_max - v0 * v0) / (2.0 * u_max)
    segs: list[tuple] = []
    if d <= d_acc + _EPS:
        t_cross = advance_time(v0, u_max, d)
        segs.append((t0, p0, v0, u_max, t0 + max(t_cross, _TIME_TOL)))
    else:
        t_acc = (v_max - v0) / u_max
        if t_acc > _TIME_TOL:
            segs.append((t0, p0, v0, u_max, t0 + t_acc))
        t_cruise = t0 + t_acc
        segs.append((t_cruise, p0 + d_acc, v_max, 0.0,
                     t_cruise + (d - d_acc) / v_max))
    return segs


def min_time_profile(t0: float, p0: float, v0: float, p_end: float,
                     v_max: float, u_max: float) -> Profile:
    """Maximal-acceleration profile from (t0, p0, v0) through p_end."""
    return as_profile(min_time_segments(t0, p0, v0, p_end, v_max, u_max),
                      t0, p0, v0)


def exact_arrival_segments(t0: float, p0: float, v0: float, boundary: float,
                           target: float, v_min: float, v_max: float,
                           u_min: float, u_max: float,
                           ) -> tuple[list[tuple], float, bool]:
    """Segments from (t0, p0, v0) crossing `boundary` at exactly `target`.

    Returns (segments, crossing_time, exact). When no profile within the
    braking limit can be that late (cannot slow enough before the boundary),
    the segments brake at u_min throughout and cross early: exact is False.
    A target earlier than the maximal-acceleration arrival raises
    InfeasibleTargetsError.
    """
    d = boundary - p0
    T = target - t0
    if d <= _EPS:
        return [], t0, True  # boundary already behind the vehicle
    if T <= _TIME_TOL:
        raise InfeasibleTargetsError(
            f"target {target:.6f} not after state time {t0:.6f}")

    floor = max(v_min, 0.0)

    if v0 <= _EPS:
        # Standing start: hold, then ramp out to cross exactly on target.
        go_time = _ramp_cross_time(d, u_max, v_max)
        depart = target - go_time
        if depart < t0 - _TIME_TOL:
            raise InfeasibleTargetsError(
                f"target {target:.6f} too early for standing start {d:.3f} m away")
        depart = max(depart, t0)
        segs: list[tuple] = []
        if depart > t0 + _TIME_TOL:
            segs.append((t0, p0, 0.0, 0.0, depart))
        segs.extend(_ramp_segments(depart, p0, d, u_max, v_max))
        return segs, target, True

    a = 2.0 * (d - v0 * T) / (T * T)
    if a > u_max + 1e-9:
        raise InfeasibleTargetsError(
            f"target {target:.6f} needs acceleration {a:.3f} above limit {u_max:.3f}")
    v_end = v0 + a * T

    if v_end > v_max + 1e-9:
        # Ramp to v_max then cruise, tuned to cross exactly on target.
        if v_max - v0 < 1e-9:
            raise InfeasibleTargetsError(
                f"target {target:.6f} earlier than cruise at the speed cap")
        tau = 2.0 * (v_max * T - d) / (v_max - v0)
        if tau <= _TIME_TOL or tau > T + 1e-6:
            raise InfeasibleTargetsError(
                f"target {target:.6f} unreachable under speed cap {v_max:.3f}")
        a_ramp = (v_max - v0) / tau
        if a_ramp > u_max + 1e-9:
            raise InfeasibleTargetsError(
                f"target {target:.6f} unreachable under speed cap {v_max:.3f}")
        tau = min(tau, T)
        segs = [(t0, p0, v0, a_ramp, t0 + tau)]
        segs.append((t0 + tau, p0 + (v0 + v_max) * 0.5 * tau, v_max, 0.0, target))
        return segs, target, True

    if v_end >= floor - 1e-9 and a >= u_min - 1e-9:
        return [(t0, p0, v0, a, target)], target, True

    # Too late for any single constant acceleration: brake at the limit down
    # to a holding speed v_h, then cruise, crossing exactly on target.
    beta = -u_min
    half_b = beta * T - v0
    disc = half_b * half_b - (v0 * v0 - 2.0 * beta * d)
    if disc >= 0.0:
        v_h = -half_b + math.sqrt(disc)
        if v_h >= max(floor, _EPS) - 1e-12 and v_h <= v0 + 1e-9:
            v_h = min(max(v_h, max(floor, 0.0)), v0)
            if v0 - v_h < 1e-9:
                return [(t0, p0, v0, 0.0, target)], target, True
            tau = (v0 - v_h) / beta
            segs = [(t0, p0, v0, u_min, t0 + tau)]
            p_ramp = p0 + (v0 + v_h) * 0.5 * tau
            if v_h > _EPS:
                segs.append((t0 + tau, p_ramp, v_h, 0.0, target))
                return segs, target, True

    if floor <= _EPS:
        # Stop at the boundary and hold until the target releases the crossing.
        a_stop = -v0 * v0 / (2.0 * d)
        if a_stop < u_min - 1e-9:
            return _brake_limited(t0, p0, v0, boundary, u_min)
        t_stop = t0 + 2.0 * d / v0
        segs = [(t0, p0, v0, a_stop, t_stop)]
        if target > t_stop + _TIME_TOL:
            segs.append((t_stop, boundary, 0.0, 0.0, target))
        return segs, max(target, t_stop), True

    # Positive crawl floor and still too late: go as slowly as allowed.
    tau = (v0 - floor) / beta
    t_ramp_end = t0 + min(tau, advance_time(v0, u_min, d))
    ramp_d = (v0 + floor) * 0.5 * tau
    if ramp_d >= d:
        return _brake_limited(t0, p0, v0, boundary, u_min)
    segs = [(t0, p0, v0, u_min, t0 + tau)]
    t_cross = t0 + tau + (d - ramp_d) / floor
    segs.append((t0 + tau, p0 + ramp_d, floor, 0.0, t_cross))
    return segs, t_cross, False


def _ramp_cross_time(d: float, u_max: float, v_max: float) -> float:
    d_acc = v_max * v_max / (2.0 * u_max)
    if d <= d_acc:
        return math.sqrt(2.0 * d / u_max)
    return v_max / u_max + (d - d_acc) / v_max


def _ramp_segments(t0: float, p0: float, d: float, u_max: float,
                   v_max: float) -> list[tuple]:
    d_acc = v_max * v_max / (2.0 * u_max)
    if d <= d_acc:
        return [(t0, p0, 0.0, u_max, t0 + math.sqrt(2.0 * d / u_max))]
    t_acc = v_max / u_max
    return [(t0, p0, 0.0, u_max, t0 + t_acc),
            (t0 + t_acc, p0 + d_acc, v_max, 0.0, t0 + t_acc + (d - d_acc) / v_max)]


def _brake_limited(t0: float, p0: float, v0: float, boundary: float,
                   u_min: float) -> tuple[list[tuple], float, bool]:
    """Hardest-allowed braking; crosses the boundary early. exact = False."""
    t_cross = t0 + advance_time(v0, u_min, boundary - p0)
    return [(t0, p0, v0, u_min, t_cross)], t_cross, False
