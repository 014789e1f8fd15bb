"""Tree search over passing orders: the upper planning level.

Nodes are order prefixes; extending a prefix by one vehicle reuses the
parent's schedule work, so evaluation cost is one vehicle per edge rather
than one full interpretation per node.  The search is deterministic: the
baseline order is evaluated first and kept as the incumbent, expansion
order is fixed, and score ties break toward the lowest child index.
Budgets large enough to expand the whole tree therefore return the exact
optimum.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .dynamics import Action, VehicleState
from .errors import ConfigError
from .interpreter import PlannerParams, PlanningContext, ScheduleState, VehicleSchedule
from .ordering import PassingOrder, fifo_order, forced_action, lane_queues
from .road import CellGrid, allowed_actions

_REWARD_EPS = 1e-9


@dataclass(frozen=True)
class SearchParams:
    """Exploration weight, value-mixing weight, and the two budgets."""

    c: float = 0.2
    omega: float = 0.2
    node_budget: int = 200
    time_budget: float = 0.5
    seed: int | None = None  # reserved: the reference search is deterministic

    def __post_init__(self) -> None:
        if self.c < 0.0:
            raise ConfigError("exploration weight c must be >= 0")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError("omega must lie in [0, 1]")
        if self.node_budget <= 0 or self.time_budget <= 0.0:
            raise ConfigError("budgets must be positive")


class TreeNode:
    __slots__ = ("parent", "state", "moves", "next_child", "children",
                 "visits", "j_best", "exhausted")

    def __init__(self, parent: "TreeNode | None", state: ScheduleState):
        self.parent = parent
        self.state = state
        self.moves: list[tuple[int, Action]] | None = None  # lazy
        self.next_child = 0
        self.children: list[TreeNode] = []
        self.visits = 0
        self.j_best = math.inf
        self.exhausted = False

    @property
    def j_partial(self) -> float:
        return self.state.total_delay


def _reward(j: float, j_baseline: float) -> float:
    """Objective -> [0, 1]: the baseline maps to 1, worse decays toward 0."""
    if j_baseline <= 0.0:
        return 0.0
    return min(1.0, j_baseline / max(j, _REWARD_EPS))


def node_score(node: TreeNode, parent_visits: int, params: SearchParams,
               j_baseline: float) -> float:
    explore = params.c * math.sqrt(math.log(parent_visits) / node.visits)
    return (params.omega * _reward(node.j_partial, j_baseline)
            + (1.0 - params.omega) * _reward(node.j_best, j_baseline)
            + explore)


@dataclass(frozen=True)
class PlanResult:
    order: PassingOrder
    objective: float
    j_fifo: float
    schedules: dict[int, VehicleSchedule]
    curve: tuple[tuple[int, float], ...]  # (nodes expanded, incumbent J)
    nodes_expanded: int
    iterations: int
    elapsed: float
    exhausted: bool

    @property
    def improvement(self) -> float:
        if self.j_fifo <= 0.0:
            return 0.0
        return (self.j_fifo - self.objective) / self.j_fifo


class _Search:
    def __init__(self, ctx: PlanningContext, search: SearchParams,
                 grid: CellGrid):
        self.ctx = ctx
        self.grid = grid
        self.params = search
        self.queues = lane_queues(ctx.order_pool)
        self.lanes = sorted(self.queues)
        self.n_vehicles = len(ctx.order_pool)

    # --- ordering plumbing -------------------------------------------------

    def _node_moves(self, node: TreeNode) -> list[tuple[int, Action]]:
        if node.moves is None:
            assigned = {vid for vid, _ in node.state.entries}
            moves: list[tuple[int, Action]] = []
            for lane in self.lanes:
                front = next((v for v in self.queues[lane]
                              if v.id not in assigned), None)
                if front is None:
                    continue
                for action in allowed_actions(self.grid, lane):
                    moves.append((front.id, action))
            node.moves = moves
        return node.moves

    def _terminal(self, node: TreeNode) -> bool:
        return len(node.state.entries) == self.n_vehicles

    # --- the four steps ----------------------------------------------------

    def select(self, root: TreeNode, j_baseline: float) -> TreeNode:
        node = root
        while True:
            if self._terminal(node):
                return node
            moves = self._node_moves(node)
            if node.next_child < len(moves):
                return node
            best: TreeNode | None = None
            best_score = -math.inf
            for child in node.children:
                if child.exhausted:
                    continue
                s = node_score(child, node.visits, self.params, j_baseline)
                if s > best_score + 1e-15:
                    best, best_score = child, s
            if best is None:
                return node  # fully exhausted subtree; caller breaks
            node = best

    def expand(self, node: TreeNode) -> TreeNode:
        vid, action = self._node_moves(node)[node.next_child]
        node.next_child += 1
        child = TreeNode(node, node.state.extend(vid, action))
        node.children.append(child)
        return child

    def simulate(self, node: TreeNode) -> ScheduleState:
        """Deterministic heuristic completion of the node's order.

        Repeatedly appends the unassigned front vehicle farthest downstream;
        a forced lane-changer is passed over while its gap looks unsafe,
        unless nothing else remains.
        """
        state = node.state
        assigned = {vid for vid, _ in state.entries}
        ptr = {lane: 0 for lane in self.lanes}
        remaining = self.n_vehicles - len(assigned)
        moves: list[tuple[int, Action]] = []
        while remaining > 0:
            fronts: list[VehicleState] = []
            for lane in self.lanes:
                q = self.queues[lane]
                i = ptr[lane]
                while i < len(q) and q[i].id in assigned:
                    i += 1
                ptr[lane] = i
                if i < len(q):
                    fronts.append(q[i])
            fronts.sort(key=lambda v: (-v.position, v.id))
            pick: VehicleState | None = None
            for cand in fronts:
                act = forced_action(self.grid, cand.lane)
                if act is Action.CHANGE_LANE and not self.ctx.change_safe_now[cand.id]:
                    continue
                pick = cand
                break
            if pick is None:
                pick = fronts[0]  # every candidate is an uneasy changer
            moves.append((pick.id, forced_action(self.grid, pick.lane)))
            assigned.add(pick.id)
            remaining -= 1
        return state.extend_many(moves) if moves else state

    @staticmethod
    def backpropagate(node: TreeNode, rollout_j: float) -> None:
        walk: TreeNode | None = node
        while walk is not None:
            walk.visits += 1
            if rollout_j < walk.j_best:
                walk.j_best = rollout_j
            walk = walk.parent

    def _mark_exhausted(self, node: TreeNode) -> None:
        walk: TreeNode | None = node
        while walk is not None:
            moves = self._node_moves(walk) if not self._terminal(walk) else []
            done = (walk.next_child >= len(moves)
                    and all(c.exhausted for c in walk.children))
            if self._terminal(walk):
                done = True
            if not done:
                break
            walk.exhausted = True
            walk = walk.parent


def plan(
    vehicles: list[VehicleState],
    grid: CellGrid,
    planner: PlannerParams | None = None,
    search: SearchParams | None = None,
    *,
    t_now: float = 0.0,
    seed_vehicles: list[VehicleState] | None = None,
    committed: tuple[tuple[int, int, float], ...] = (),
    base_ledger=None,
) -> PlanResult:
    """Best passing order found within the budgets; never worse than FIFO."""
    if not vehicles:
        raise ConfigError("plan needs at least one vehicle")
    started = time.perf_counter()
    if planner is None:
        planner = PlannerParams.defaults(grid)
    if search is None:
        search = SearchParams()
    ctx = PlanningContext(vehicles, grid, planner, t_now=t_now,
                          seed_vehicles=seed_vehicles, committed=committed,
                          base_ledger=base_ledger)

    fifo = fifo_order(vehicles, grid)
    fifo_state = ctx.initial_state().extend_many(list(fifo))
    j_fifo = fifo_state.total_delay

    incumbent_order = fifo
    incumbent_state = fifo_state
    incumbent_j = j_fifo
    curve: list[tuple[int, float]] = [(0, incumbent_j)]
    expanded = 0
    iterations = 0
    exhausted = False

    if j_fifo > _REWARD_EPS:
        eng = _Search(ctx, search, grid)
        root = TreeNode(None, ctx.initial_state())
        while expanded < search.node_budget:
            if time.perf_counter() - started >= search.time_budget:
                break
            node = eng.select(root, j_fifo)
            if root.exhausted:
                exhausted = True
                break
            iterations += 1
            if not eng._terminal(node) and node.next_child < len(eng._node_moves(node)):
                node = eng.expand(node)
                expanded += 1
            rollout_state = eng.simulate(node)
            j = rollout_state.total_delay
            eng.backpropagate(node, j)
            eng._mark_exhausted(node)
            if j < incumbent_j - 1e-12:
                incumbent_j = j
                incumbent_state = rollout_state
                incumbent_order = PassingOrder(rollout_state.entries)
            curve.append((expanded, incumbent_j))
            if root.exhausted:
                exhausted = True
                break

    return PlanResult(
        order=incumbent_order,
        objective=incumbent_j,
        j_fifo=j_fifo,
        schedules=incumbent_state.schedules,
        curve=tuple(curve),
        nodes_expanded=expanded,
        iterations=iterations,
        elapsed=time.perf_counter() - started,
        exhausted=exhausted,
    )
