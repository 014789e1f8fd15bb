"""Cooperative driving through a work zone: a passing-order tree search on
top of a cell-reservation trajectory planner, plus a closed-loop simulator
for comparing it against first-in-first-out ordering."""

__version__ = "0.1.0"

from .config import (GeometryConfig, ScenarioConfig, SimulationParams,
                     dump_scenario, load_scenario, scenario_from_dict,
                     scenario_to_dict)
from .dynamics import (Action, FollowingParams, KinematicLimits, SafetyParams,
                       VehicleState, car_following_step, comfort_braking,
                       is_lane_change_safe, safe_following_speed, safety_gap)
from .errors import (ConfigError, CoopDriveError, InfeasibleRouteError,
                     InfeasibleTargetsError, OracleMismatchError,
                     SafetyViolationError, UnreachableCellError)
from .interpreter import (PlannerParams, PlanningContext, VehicleSchedule,
                          interpret)
from .mcts import PlanResult, SearchParams, node_score, plan
from .ordering import PassingOrder, fifo_order, successors, validate
from .road import CellGrid, OccupancySchedule, Route, build_grid
from .simulation import (ArrivalProcess, Metrics, RunResult,
                         improvement_ratio, run, snapshot_vehicles, sweep,
                         vehicle_delay)
from .trajectories import TrajectorySet, build_trajectory_set

__all__ = [
    "__version__",
    "Action", "ArrivalProcess", "CellGrid", "ConfigError", "CoopDriveError",
    "FollowingParams", "GeometryConfig", "InfeasibleRouteError",
    "InfeasibleTargetsError", "KinematicLimits", "Metrics",
    "OccupancySchedule", "OracleMismatchError", "PassingOrder", "PlanResult",
    "PlannerParams", "PlanningContext", "Route", "RunResult", "SafetyParams",
    "SafetyViolationError", "ScenarioConfig", "SearchParams",
    "SimulationParams", "TrajectorySet", "UnreachableCellError",
    "VehicleSchedule", "VehicleState", "build_grid", "build_trajectory_set",
    "car_following_step", "comfort_braking", "dump_scenario", "fifo_order",
    "improvement_ratio", "interpret", "is_lane_change_safe", "load_scenario",
    "node_score", "plan", "run", "safe_following_speed", "safety_gap",
    "scenario_from_dict", "scenario_to_dict", "snapshot_vehicles",
    "successors", "sweep", "validate", "vehicle_delay",
]
