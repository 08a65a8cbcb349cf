import itertools

import numpy as np
import pytest

from robusthmm import (CapExceeded, ControlProblem, Generator, GeneratorGrid,
                       PolicyTree, PriorSpec, SimplexGrid, StateFunctional,
                       UncertaintyParams, brute_force, evaluate_policy,
                       one_step_expectation, solve)
from robusthmm.control import StateRegistry

P1 = UncertaintyParams(k=1.0, k_exp=1.0)


def _uninformative_problem(horizon=2, run_costs=None, terminal=7.5):
    """Single uninformative candidate: every surface stays flat at zero, so
    value backs out the pure cost flow."""
    gens = GeneratorGrid(
        candidates=(Generator(transition=np.array([[0.7, 0.4], [0.3, 0.6]]),
                              emission=np.full((2, 2), 0.5)),),
        prior_penalty=np.array([0.0]),
        control_penalty=np.array([[0.0], [0.0]]))
    grid = SimplexGrid.build(2, 5)
    prior = PriorSpec(initial_penalty=np.zeros(len(grid)),
                      generator_mode="dynamic", framework="dr")
    if run_costs is None:
        run_costs = np.zeros((horizon, 2))
    return ControlProblem(labels=("a", "b"), gens=gens, prior=prior,
                          grid=grid, horizon=horizon, params=P1,
                          running_cost=np.asarray(run_costs, float),
                          terminal_cost=StateFunctional(
                              values=np.full(2, terminal)))


def _sensing_problem(horizon=2, grid_m=8):
    """Two controls trade a running fee against an informative penalty row."""
    gens = GeneratorGrid(
        candidates=(Generator(transition=np.array([[0.9, 0.2], [0.1, 0.8]]),
                              emission=np.array([[0.75, 0.25], [0.25, 0.75]])),
                    Generator(transition=np.array([[0.9, 0.2], [0.1, 0.8]]),
                              emission=np.full((2, 2), 0.5))),
        prior_penalty=np.array([0.0, 0.0]),
        control_penalty=np.array([[0.0, 2.0], [2.0, 0.0]]))
    grid = SimplexGrid.build(2, grid_m)
    prior = PriorSpec(initial_penalty=np.zeros(len(grid)),
                      generator_mode="dynamic", framework="dr")
    return ControlProblem(labels=("listen", "idle"), gens=gens, prior=prior,
                          grid=grid, horizon=horizon, params=P1,
                          running_cost=np.tile([0.3, 0.0], (horizon, 1)),
                          terminal_cost=StateFunctional(
                              values=np.array([2.0, 0.5])))


def test_constant_costs_give_constant_value():
    problem = _uninformative_problem(horizon=2, terminal=7.5)
    solution = solve(problem)
    for record in solution.values.values():
        assert abs(record.value - 7.5) < 1e-9
    # every control ties, so the extracted policy is the first control
    for (history, sid), record in solution.values.items():
        if record.control is not None:
            assert record.control == 0


def test_dominated_control_is_never_chosen():
    run = np.array([[0.0, 1.0], [0.0, 1.0]])
    problem = _uninformative_problem(horizon=2, run_costs=run)
    solution = solve(problem)
    for record in solution.values.values():
        if record.control is not None:
            assert record.control == 0
    # forcing the dominated control pays the excess once per step
    worst = evaluate_policy(problem, PolicyTree.from_history_map(
        {h: 1 for h in [()] + [(y,) for y in range(2)]}))
    assert abs(worst.root_value - (solution.root_value + 2.0)) < 1e-9


def test_solver_matches_policy_enumeration():
    problem = _sensing_problem(horizon=2)
    solution = solve(problem)
    assert abs(brute_force(problem) - solution.root_value) < 1e-9


def test_optimal_policy_evaluates_to_value_and_others_dominate():
    problem = _sensing_problem(horizon=2)
    solution = solve(problem)
    replay = evaluate_policy(problem, solution.policy)
    assert abs(replay.root_value - solution.root_value) < 1e-12
    nodes = [()] + [(y,) for y in range(2)]
    for assignment in itertools.product(range(2), repeat=len(nodes)):
        policy = PolicyTree.from_history_map(dict(zip(nodes, assignment)))
        cost = evaluate_policy(problem, policy).root_value
        assert cost >= solution.root_value - 1e-9


def test_dynamic_programming_identity_on_policy():
    problem = _sensing_problem(horizon=3)
    solution = solve(problem)
    d = problem.gens.n_symbols
    frontier = [((), solution.levels[0][()][0])]
    while frontier:
        history, sid = frontier.pop()
        record = solution.values[(history, sid)]
        if record.control is None:
            continue
        u = record.control
        child_vals = np.array([
            solution.values[(history + (y,),
                             solution.successors[(history, sid, u, y)])].value
            for y in range(d)])
        one_step = one_step_expectation(
            child_vals, solution.registry.surfaces[sid], problem.gens,
            np.zeros(len(problem.gens)), problem.params)
        recomposed = problem.run_cost(len(history), history, u) + one_step
        assert abs(record.value - recomposed) < 1e-9
        for y in range(d):
            frontier.append((history + (y,),
                             solution.successors[(history, sid, u, y)]))


def test_nodes_sharing_surface_share_value():
    problem = _sensing_problem(horizon=3)
    solution = solve(problem)
    by_state: dict = {}
    for (history, sid), record in solution.values.items():
        by_state.setdefault(sid, set()).add(round(record.value, 12))
    for values in by_state.values():
        assert len(values) == 1


def test_bellman_difference_recomputation():
    problem = _sensing_problem(horizon=2)
    solution = solve(problem)
    d = problem.gens.n_symbols
    for (history, sid), record in solution.values.items():
        if record.control is None:
            continue
        qs = []
        for u in range(problem.n_controls):
            child_vals = np.array([
                solution.values[(history + (y,),
                                 solution.successors[(history, sid, u, y)])].value
                for y in range(d)])
            sup = one_step_expectation(
                child_vals, solution.registry.surfaces[sid], problem.gens,
                np.zeros(len(problem.gens)), problem.params)
            qs.append(problem.run_cost(len(history), history, u) + sup)
        assert abs(min(qs) - record.value) < 1e-12
        assert record.q_values == tuple(qs)


def test_resolving_subtree_reproduces_policy():
    problem = _sensing_problem(horizon=3)
    solution = solve(problem)
    root_sid = solution.levels[0][()][0]
    for y in range(2):
        u_root = solution.policy.control_at(
            (), solution.registry.surfaces[root_sid])
        child_sid = solution.successors[((), root_sid, u_root, y)]
        sub = solve(problem, root_history=(y,),
                    root_surface=solution.registry.surfaces[child_sid])
        for (history, sid), record in sub.values.items():
            if record.control is None:
                continue
            surface = sub.registry.surfaces[sid]
            orig_sid = solution.registry._ids[StateRegistry.key_of(surface)]
            assert (solution.policy.control_at(history, surface)
                    == sub.policy.control_at(history, surface))
            assert abs(solution.values[(history, orig_sid)].value
                       - record.value) < 1e-12


def test_caps_raise():
    problem = _sensing_problem(horizon=3)
    object.__setattr__(problem, "state_cap", 5)
    with pytest.raises(CapExceeded):
        solve(problem)
    problem2 = _sensing_problem(horizon=3)
    object.__setattr__(problem2, "policy_cap", 10)
    with pytest.raises(CapExceeded):
        brute_force(problem2)


def test_policy_lookup_failure():
    problem = _sensing_problem(horizon=2)
    with pytest.raises(KeyError):
        evaluate_policy(problem, PolicyTree.from_history_map({(): 0}))


def test_brute_force_single_control_equals_policy_evaluation():
    gens = GeneratorGrid(
        candidates=(Generator(transition=np.array([[0.9, 0.2], [0.1, 0.8]]),
                              emission=np.array([[0.75, 0.25],
                                                 [0.25, 0.75]])),),
        prior_penalty=np.array([0.0]),
        control_penalty=np.array([[0.0]]))
    grid = SimplexGrid.build(2, 6)
    prior = PriorSpec(initial_penalty=np.zeros(len(grid)),
                      generator_mode="dynamic", framework="dr")
    problem = ControlProblem(labels=("only",), gens=gens, prior=prior,
                             grid=grid, horizon=2, params=P1,
                             running_cost=np.array([[0.5], [0.5]]),
                             terminal_cost=StateFunctional(
                                 values=np.array([1.0, 0.0])))
    only = PolicyTree.from_history_map({h: 0 for h in
                                        [()] + [(y,) for y in range(2)]})
    assert brute_force(problem) == evaluate_policy(problem, only).root_value


def test_brute_force_horizon_one_is_direct_scan():
    problem = _sensing_problem(horizon=1)
    per_control = []
    for u in range(problem.n_controls):
        policy = PolicyTree.from_history_map({(): u})
        per_control.append(evaluate_policy(problem, policy).root_value)
    assert brute_force(problem) == min(per_control)


def test_static_scope_rejected():
    gens = GeneratorGrid(
        candidates=(Generator(transition=np.eye(2),
                              emission=np.full((2, 2), 0.5)),),
        prior_penalty=np.array([0.0]),
        control_penalty=np.array([[0.0], [0.0]]))
    grid = SimplexGrid.build(2, 4)
    prior = PriorSpec(initial_penalty=np.zeros(len(grid)),
                      generator_mode="static", framework="dr")
    with pytest.raises(ValueError):
        ControlProblem(labels=("a", "b"), gens=gens, prior=prior, grid=grid,
                       horizon=1, params=P1, running_cost=np.zeros((1, 2)),
                       terminal_cost=StateFunctional(values=np.zeros(2)))
