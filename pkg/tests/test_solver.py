import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stmpc.protocol import ControlPlan, TerminalSet, pad_broadcast
from stmpc.solver import (InitializationInfeasibleError, ScenarioSet, build_scenarios, feasible,
                          pattern_search, plan_inputs, solve, worst_case_objective)

ZERO_ONLY = ScenarioSet(np.zeros((1, 5, 2)))
PAPER_STATES = [(1.5, 0.7), (-0.5, -1.1), (-2.0, 0.5), (0.7, -1.0), (1.95, 0.0)]


def test_scenarios_vertices_only(model):
    s = build_scenarios(model, 5, 0, seed=0)
    assert len(s) == 5
    np.testing.assert_array_equal(s.scenarios[0], 0.0)
    consts = {tuple(s.scenarios[k, 0]) for k in range(1, 5)}
    assert consts == {(-0.1, -0.15), (-0.1, 0.15), (0.1, -0.15), (0.1, 0.15)}


def test_scenarios_deterministic_and_on_vertices(model):
    a = build_scenarios(model, 5, 20, seed=11)
    b = build_scenarios(model, 5, 20, seed=11)
    assert len(a) == 25
    np.testing.assert_array_equal(a.scenarios, b.scenarios)
    rest = a.scenarios[1:]
    assert np.all(np.isin(np.abs(rest[..., 0]), [0.1]))
    assert np.all(np.isin(np.abs(rest[..., 1]), [0.15]))


def test_objective_zero_at_origin(model, weights):
    v, _ = worst_case_objective(model, [0, 0], [np.zeros((5, 2))],
                                ControlPlan(head=(0.0,)), ZERO_ONLY, 1, weights, gain=[-0.87, -1.04])
    assert v == 0.0


def test_objective_two_term_hand_value(model, weights):
    one = ScenarioSet(np.zeros((1, 1, 2)))
    v, k = worst_case_objective(model, [1.0, 0.0], [], ControlPlan(head=(0.0,)), one, 1, weights)
    # successor of (1, 0) with u = 0: (1, -0.3 * 0.33 * e^-1)
    x2 = -0.3 * 0.33 * np.exp(-1.0)
    F = 8.05 + 2 * 2.90 * x2 + 3.48 * x2 * x2
    assert v == pytest.approx(0.6 / 1.1 + F, rel=1e-12)
    assert k == 0


def test_objective_superset_monotone(model, weights):
    small = build_scenarios(model, 5, 0, seed=0)
    big = small.union(build_scenarios(model, 5, 10, seed=5))
    plan = ControlPlan(head=(0.5, -0.2), tail=(1.0, 0.0, 0.0))
    a, _ = worst_case_objective(model, [1.0, 0.3], [], plan, small, 2, weights, gain=[-0.87, -1.04])
    b, _ = worst_case_objective(model, [1.0, 0.3], [], plan, big, 2, weights, gain=[-0.87, -1.04])
    assert b >= a


def test_feasible_examples(model, terminal):
    kappa = [-0.87, -1.04]
    scen = build_scenarios(model, 5, 0, seed=0)
    law = ControlPlan(head=(), terminal_from=0)
    assert feasible(model, [0.5, 0.0], law, scen, None, None, terminal, 3.58, gain=kappa)
    assert not feasible(model, [2.5, 0.0], law, scen, None, None, terminal, 3.58, gain=kappa)
    assert not feasible(model, [0.0, 0.0], ControlPlan(head=(5.0,)), scen, None, None, terminal,
                        3.58, gain=kappa)


def test_feasible_consistency(model, terminal):
    kappa = [-0.87, -1.04]
    law = ControlPlan(head=(), terminal_from=0)
    _, states = plan_inputs(model, [0.5, 0.0], law, 5, kappa)
    far = pad_broadcast(states[:5] + 10.0, 1, 0, 5)
    assert not feasible(model, [0.5, 0.0], law, ZERO_ONLY, far, 0, terminal, 3.58, gain=kappa)
    near = pad_broadcast(states[:5], 1, 0, 5)
    # the last predicted state is compared with the padded zero entry
    tight = float(np.linalg.norm(states[5])) + 1e-9
    assert feasible(model, [0.5, 0.0], law, ZERO_ONLY, near, 0, terminal, tight, gain=kappa)
    assert not feasible(model, [0.5, 0.0], law, ZERO_ONLY, near, 0, terminal, tight - 2e-9,
                        gain=kappa)


def test_solve_origin_is_zero(model, params):
    r = solve(model, [0, 0], [np.zeros((5, 2))], None, None, 1, params, ZERO_ONLY)
    assert r.value == 0.0 and r.feasible and not r.fallback_used
    assert r.plan.head == (0.0,)


@pytest.mark.parametrize("x0", PAPER_STATES)
def test_initial_states_are_solvable(model, params, x0):
    scen = build_scenarios(model, 5, 20, seed=0)
    r = solve(model, x0, [np.zeros((5, 2))], None, None, 1, params, scen)
    assert r.feasible and not r.fallback_used
    assert r.predicted_states.shape == (6, 2)
    assert np.all(np.abs(r.predicted_states[1:, 0]) <= 1.95 + 1e-12)


def test_solve_value_nonincreasing_in_budget(model, params):
    from dataclasses import replace
    scen = build_scenarios(model, 5, 20, seed=0)
    values = [solve(model, [1.5, 0.7], [], None, None, 2, replace(params, budget=b), scen).value
              for b in (120, 240, 400)]
    assert values[0] >= values[1] >= values[2]


def test_infeasible_start_raises_or_falls_back(model, params):
    scen = build_scenarios(model, 5, 0, seed=0)
    # far outside the recoverable region: the position bound cannot be met
    with pytest.raises(InitializationInfeasibleError):
        solve(model, [1.9, 8.0], [], None, None, 1, params, scen)
    fb = ControlPlan(head=(0.0,))
    r = solve(model, [1.9, 8.0], [], None, None, 1, params, scen, fallback=fb)
    assert r.fallback_used and r.plan == fb and not r.feasible


def test_solve_rejects_bad_interval(model, params):
    with pytest.raises(ValueError):
        solve(model, [0, 0], [], None, None, 6, params, ZERO_ONLY)


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-2, 2), min_size=2, max_size=2), budget=st.integers(5, 80))
def test_pattern_search_never_worse_than_start(c, budget):
    target = np.array(c)

    def fun(Z):
        return ((Z - target) ** 2).sum(axis=1)

    z0 = np.zeros(2)
    z, fz, evals, hz, hf = pattern_search(fun, z0, [-3, -3], [3, 3], budget)
    assert fz <= fun(z0[None])[0]
    assert evals <= max(budget, 1)
    assert fz == pytest.approx(hf.min())


def test_pattern_search_converges_on_quadratic():
    def fun(Z):
        return ((Z - [0.3, -0.7]) ** 2).sum(axis=1)

    z, fz, *_ = pattern_search(fun, [0, 0], [-1, -1], [1, 1], 400)
    np.testing.assert_allclose(z, [0.3, -0.7], atol=1e-6)
