"""Finite-horizon robust control where controls shape the per-step
generator penalty.

The controller state is the pair (observation history, penalty surface): the
surface summarizes everything the past controls and observations imply about
the hidden chain. Successor surfaces are produced by the forward image step
with the chosen control's penalty row, so the solver enumerates the reachable
surfaces per history node (deduplicated by value hash), fills values bottom
up, and extracts the minimizing control per (node, surface) pair.

Costs: choosing control ``u`` at a node of depth ``t`` pays the running cost
indexed ``t`` immediately; the terminal cost is charged against the leaf
surface by an infimum over beliefs of expected cost minus converted penalty
(beliefs whose converted penalty is infinite are excluded from the scan).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import inf
import numpy as np

from .errors import CapExceeded, InfeasibleSurface
from .expectation import (StateFunctional, UncertaintyParams, _rho,
                          one_step_expectation)
from .models import DYNAMIC, GeneratorGrid, PriorSpec, SimplexGrid, gamma_at
from .penalty import PenaltySurface, forward_image_step, initial_grid_surface

STATE_CAP_DEFAULT = 20000
POLICY_CAP_DEFAULT = 10 ** 7
_HASH_DECIMALS = 12


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """A finite control set acting through per-control generator penalties.

    ``running_cost`` is either a ``(horizon, n_controls)`` array or a
    callable ``(t, history, u) -> float``; ``terminal_cost`` gives the cost
    per hidden state (optionally per history).
    """

    labels: tuple[str, ...]
    gens: GeneratorGrid
    prior: PriorSpec
    grid: SimplexGrid
    horizon: int
    params: UncertaintyParams
    running_cost: object
    terminal_cost: StateFunctional
    state_cap: int = STATE_CAP_DEFAULT
    policy_cap: int = POLICY_CAP_DEFAULT

    def __post_init__(self):
        if not self.labels:
            raise ValueError("control set must be nonempty")
        if self.prior.generator_mode != DYNAMIC:
            raise ValueError("control requires the dynamic generator scope")
        if self.gens.control_penalty is None and self.gens.gamma_fn is None:
            raise ValueError("generator grid carries no per-control penalties")
        if (self.gens.control_penalty is not None
                and self.gens.control_penalty.shape[0] != len(self.labels)):
            raise ValueError("one penalty row per control required")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        rc = self.running_cost
        if not callable(rc):
            rc = np.asarray(rc, dtype=np.float64)
            if rc.shape != (self.horizon, len(self.labels)):
                raise ValueError("running cost table must be (horizon, n_controls)")
        object.__setattr__(self, "running_cost", rc)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_controls(self) -> int:
        return len(self.labels)

    def run_cost(self, t: int, history: tuple, u: int) -> float:
        if callable(self.running_cost):
            return float(self.running_cost(t, tuple(history), u))
        return float(self.running_cost[t, u])


@dataclass(frozen=True)
class PolicyTree:
    """Chosen control per decision point.

    ``by_state`` keys are (history, surface key) pairs, where the surface key
    is the registry-independent hash of the penalty surface reached at the
    node; ``by_node`` keys are plain histories and apply to every surface
    reached there. Controls are predictable by construction: a key never
    mentions the symbol observed after the decision.
    """

    by_state: dict = field(default_factory=dict)
    by_node: dict = field(default_factory=dict)

    def control_at(self, history: tuple, surface: "PenaltySurface") -> int:
        history = tuple(history)
        hit = self.by_state.get((history, StateRegistry.key_of(surface)))
        if hit is None:
            hit = self.by_node.get(history)
        if hit is None:
            raise KeyError(f"policy undefined at history {history}")
        return int(hit)

    @classmethod
    def from_history_map(cls, mapping: dict) -> "PolicyTree":
        return cls(by_node={tuple(k): int(v) for k, v in mapping.items()})


@dataclass(frozen=True)
class ControlValue:
    """Value at one (node, surface) pair with its per-control breakdown."""

    value: float
    control: int | None
    q_values: tuple[float, ...] | None


class StateRegistry:
    """Interned penalty surfaces, deduplicated by rounded value hash."""

    def __init__(self):
        self.surfaces: list[PenaltySurface] = []
        self._ids: dict = {}

    @staticmethod
    def key_of(surface: PenaltySurface) -> tuple:
        rounded = np.round(surface.values, _HASH_DECIMALS) + 0.0
        return (surface.time, rounded.tobytes())

    def intern(self, surface: PenaltySurface) -> int:
        key = self.key_of(surface)
        hit = self._ids.get(key)
        if hit is not None:
            return hit
        self.surfaces.append(surface)
        self._ids[key] = len(self.surfaces) - 1
        return len(self.surfaces) - 1

    def __len__(self) -> int:
        return len(self.surfaces)


@dataclass
class ControlSolution:
    """Solver output: the policy, per-(node, surface) values, the surface
    registry, and the successor map (history, state, control, symbol) ->
    state."""

    policy: PolicyTree
    values: dict
    registry: StateRegistry
    successors: dict
    levels: list
    root_history: tuple

    @property
    def root_value(self) -> float:
        root_states = self.levels[0][self.root_history]
        return self.values[(self.root_history, root_states[0])].value


def terminal_value(cost: np.ndarray, surface: PenaltySurface,
                   params: UncertaintyParams):
    """Leaf value: infimum over beliefs of expected cost minus converted
    penalty, scanning only beliefs the surface does not exclude."""
    rho = _rho(surface.values, params)
    usable = np.isfinite(rho)
    if not usable.any():
        raise InfeasibleSurface("terminal surface excludes every belief")
    scores = surface.grid.points[usable] @ np.asarray(cost, float) - rho[usable]
    pos = int(np.argmin(scores))
    idx = np.nonzero(usable)[0][pos]
    return float(scores[pos]), surface.grid.points[idx].copy()


def _zero_gammas(gens: GeneratorGrid) -> np.ndarray:
    return np.zeros(len(gens))


def _enumerate_states(problem: ControlProblem, root_history: tuple,
                      root_surface: PenaltySurface):
    """Reachable (node, surface) pairs level by level, with the successor
    map for every (state, control, symbol) triple."""
    d = problem.gens.n_symbols
    registry = StateRegistry()
    root_id = registry.intern(root_surface)
    levels = [{root_history: [root_id]}]
    successors: dict = {}
    total = 1
    steps = problem.horizon - len(root_history)
    for depth in range(steps):
        t_obs = len(root_history) + depth + 1
        level, new_level = levels[-1], {}
        for history, state_ids in level.items():
            child_lists = {history + (y,): [] for y in range(d)}
            for state_id in state_ids:
                surface = registry.surfaces[state_id]
                for u in range(problem.n_controls):
                    gammas = gamma_at(problem.gens, t_obs, history=history,
                                      control=u)
                    for y in range(d):
                        child, _ = forward_image_step(
                            surface, problem.gens, gammas, y,
                            problem.prior.framework)
                        child_id = registry.intern(child)
                        successors[(history, state_id, u, y)] = child_id
                        bucket = child_lists[history + (y,)]
                        if child_id not in bucket:
                            bucket.append(child_id)
            for child_history, ids in child_lists.items():
                new_level[child_history] = ids
                total += len(ids)
                if total > problem.state_cap:
                    raise CapExceeded(
                        f"reachable surface states exceed {problem.state_cap}")
        levels.append(new_level)
    return registry, levels, successors


def _fill_values(problem: ControlProblem, registry, levels, successors,
                 chooser) -> tuple[dict, dict]:
    """Backward pass shared by the solver and the policy evaluator.

    ``chooser(history, state_id, q_values)`` returns the index of the control
    to charge; the solver passes the argmin, the evaluator a fixed lookup.
    """
    d = problem.gens.n_symbols
    values: dict = {}
    choices: dict = {}
    for history, state_ids in levels[-1].items():
        cost = problem.terminal_cost.at(history)
        for state_id in state_ids:
            val, _ = terminal_value(cost, registry.surfaces[state_id],
                                    problem.params)
            values[(history, state_id)] = ControlValue(val, None, None)
    for level in reversed(levels[:-1]):
        for history, state_ids in level.items():
            t = len(history)
            for state_id in state_ids:
                surface = registry.surfaces[state_id]
                q_values = []
                for u in range(problem.n_controls):
                    key = (history, state_id, u, 0)
                    if key not in successors:
                        q_values.append(inf)
                        continue
                    xi = np.array([
                        values[(history + (y,),
                                successors[(history, state_id, u, y)])].value
                        for y in range(d)])
                    sup = one_step_expectation(xi, surface, problem.gens,
                                               _zero_gammas(problem.gens),
                                               problem.params)
                    q_values.append(problem.run_cost(t, history, u) + sup)
                pick = chooser(history, state_id, q_values)
                values[(history, state_id)] = ControlValue(
                    float(q_values[pick]), pick, tuple(q_values))
                choices[(history, state_id)] = pick
    return values, choices


def solve(problem: ControlProblem, root_history: tuple = (),
          root_surface: PenaltySurface | None = None) -> ControlSolution:
    """Dynamic-programming solution of the control problem.

    Enumerates reachable (node, surface) states, fills values bottom up, and
    extracts the minimizing control everywhere; ties resolve to the lowest
    control index. ``root_history``/``root_surface`` allow re-solving a
    subproblem rooted mid-tree.
    """
    root_history = tuple(root_history)
    if root_surface is None:
        root_surface = initial_grid_surface(problem.prior, problem.gens,
                                            problem.grid)
    registry, levels, successors = _enumerate_states(problem, root_history,
                                                     root_surface)

    def best(history, state_id, q_values):
        return int(np.argmin(q_values))

    values, choices = _fill_values(problem, registry, levels, successors, best)
    policy = PolicyTree(by_state={
        (history, StateRegistry.key_of(registry.surfaces[sid])): u
        for (history, sid), u in choices.items()})
    return ControlSolution(policy=policy, values=values, registry=registry,
                           successors=successors, levels=levels,
                           root_history=root_history)


def evaluate_policy(problem: ControlProblem, policy: PolicyTree,
                    root_history: tuple = (),
                    root_surface: PenaltySurface | None = None
                    ) -> ControlSolution:
    """Remaining cost of a fixed policy, on the states it actually reaches.

    Same backward recursion as :func:`solve` with the minimization replaced
    by the policy's choice; the result dominates the optimal value pointwise.
    """
    root_history = tuple(root_history)
    if root_surface is None:
        root_surface = initial_grid_surface(problem.prior, problem.gens,
                                            problem.grid)
    d = problem.gens.n_symbols
    registry = StateRegistry()
    root_id = registry.intern(root_surface)
    levels = [{root_history: [root_id]}]
    successors: dict = {}
    steps = problem.horizon - len(root_history)
    for depth in range(steps):
        t_obs = len(root_history) + depth + 1
        level, new_level = levels[-1], {}
        for history, state_ids in level.items():
            for state_id in state_ids:
                u = policy.control_at(history, registry.surfaces[state_id])
                gammas = gamma_at(problem.gens, t_obs, history=history,
                                  control=u)
                for y in range(d):
                    child, _ = forward_image_step(
                        registry.surfaces[state_id], problem.gens, gammas, y,
                        problem.prior.framework)
                    child_id = registry.intern(child)
                    successors[(history, state_id, u, y)] = child_id
                    bucket = new_level.setdefault(history + (y,), [])
                    if child_id not in bucket:
                        bucket.append(child_id)
        levels.append(new_level)

    def fixed(history, state_id, q_values):
        return policy.control_at(history, registry.surfaces[state_id])

    values, _ = _fill_values(problem, registry, levels, successors, fixed)
    return ControlSolution(policy=policy, values=values, registry=registry,
                           successors=successors, levels=levels,
                           root_history=root_history)


def decision_nodes(problem: ControlProblem) -> list[tuple]:
    """All histories at which a control is chosen, in level/lex order."""
    d = problem.gens.n_symbols
    nodes: list[tuple] = []
    for t in range(problem.horizon):
        nodes.extend(itertools.product(range(d), repeat=t))
    return nodes


def brute_force(problem: ControlProblem) -> float:
    """Minimal root cost over every predictable policy, by enumeration.

    Exponential in the tree size; the verification oracle for the solver's
    dynamic programming recursion.
    """
    nodes = decision_nodes(problem)
    n_policies = problem.n_controls ** len(nodes)
    if n_policies > problem.policy_cap:
        raise CapExceeded(
            f"{n_policies} policies exceed the cap of {problem.policy_cap}")
    best = inf
    for assignment in itertools.product(range(problem.n_controls),
                                        repeat=len(nodes)):
        policy = PolicyTree.from_history_map(dict(zip(nodes, assignment)))
        cost = evaluate_policy(problem, policy).root_value
        if cost < best:
            best = cost
    return best
