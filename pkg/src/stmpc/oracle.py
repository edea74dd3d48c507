"""Grid dynamic-programming oracle for small scalar min-max problems.

Used only to cross-check the scenario pattern-search solver on a 1-D
benchmark where exact min-max value iteration is affordable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .protocol import ControlPlan, CostWeights, TerminalSet
from .solver import SolverParams, build_scenarios, solve

MAX_HORIZON = 3
MAX_STATE_POINTS = 401
MAX_INPUT_POINTS = 41
MAX_DISTURBANCE_POINTS = 11


class OversizeInstanceError(ValueError):
    pass


@dataclass(frozen=True)
class OracleInstance:
    dynamics: Callable  # (x, u, w) -> x+, broadcasting
    stage: Callable  # (x, u) -> cost
    terminal: Callable  # x -> cost
    N: int
    x0: float
    state_range: tuple[float, float]
    input_range: tuple[float, float]
    disturbance_range: tuple[float, float]
    state_points: int = 401
    input_points: int = 41
    disturbance_points: int = 11


def _check_size(inst: OracleInstance):
    if not 1 <= inst.N <= MAX_HORIZON:
        raise OversizeInstanceError(f"N={inst.N} outside [1, {MAX_HORIZON}]")
    for name, value, cap in (("state_points", inst.state_points, MAX_STATE_POINTS),
                             ("input_points", inst.input_points, MAX_INPUT_POINTS),
                             ("disturbance_points", inst.disturbance_points, MAX_DISTURBANCE_POINTS)):
        if not 1 <= value <= cap:
            raise OversizeInstanceError(f"{name}={value} exceeds cap {cap}")


def dp_oracle(inst: OracleInstance) -> float:
    """Min-max value iteration V_l(x) = min_u max_w [L(x,u) + V_{l-1}(f(x,u,w))], V_0 = F.

    Intermediate value functions live on the state grid and are linearly
    interpolated (clamped at the grid ends); V_0 is evaluated exactly and the
    last stage is evaluated at x0 itself, so N = 1 involves no interpolation.
    """
    _check_size(inst)
    xs = np.linspace(*inst.state_range, inst.state_points)
    us = np.linspace(*inst.input_range, inst.input_points)
    ws = np.linspace(*inst.disturbance_range, inst.disturbance_points)

    def backup(x, next_value):
        # x: (K,) -> (K,)
        X = x[:, None, None]
        U = us[None, :, None]
        W = ws[None, None, :]
        q = inst.stage(X, U) + next_value(inst.dynamics(X, U, W))
        return q.max(axis=2).min(axis=1)

    value = inst.terminal
    for _ in range(inst.N - 1):
        table = backup(xs, value)
        value = lambda x, table=table: np.interp(x, xs, table)
    return float(backup(np.array([inst.x0], dtype=float), value)[0])


def enumerate_one_step(inst: OracleInstance) -> float:
    """Independent brute force of the N = 1 value: explicit min over inputs of max over disturbances."""
    us = np.linspace(*inst.input_range, inst.input_points)
    ws = np.linspace(*inst.disturbance_range, inst.disturbance_points)
    best = np.inf
    for u in us:
        worst = -np.inf
        for w in ws:
            worst = max(worst, float(inst.stage(inst.x0, u) + inst.terminal(inst.dynamics(inst.x0, u, w))))
        best = min(best, worst)
    return best


@dataclass(frozen=True)
class ScalarLinearModel:
    """x+ = a*x + u + w with box-bounded input and additive disturbance."""

    a: float = 0.9
    input_box: tuple[float, float] = (-1.0, 1.0)
    w_bound: float = 0.1

    n = 1
    m = 1

    @property
    def state_lower(self):
        return np.array([-np.inf])

    @property
    def state_upper(self):
        return np.array([np.inf])

    @property
    def disturbance_lower(self):
        return np.array([-self.w_bound])

    @property
    def disturbance_upper(self):
        return np.array([self.w_bound])

    def f(self, x, u, d):
        return self.a * x + (np.asarray(u)[..., None] + d[..., :1])


def benchmark_instance(N: int = 2, x0: float = 1.0) -> OracleInstance:
    """x+ = 0.9x + u + w, |u| <= 1, |w| <= 0.1, L = x^2 + u^2, F = x^2."""
    return OracleInstance(
        dynamics=lambda x, u, w: 0.9 * x + u + w,
        stage=lambda x, u: x * x + u * u,
        terminal=lambda x: x * x,
        N=N, x0=x0,
        state_range=(-3.0, 3.0), input_range=(-1.0, 1.0), disturbance_range=(-0.1, 0.1),
    )


def solver_benchmark(N: int = 2, x0: float = 1.0, extra_scenarios: int = 20, seed: int = 0,
                     budget: int = 400) -> tuple[float, float]:
    """Solve the benchmark with the pattern-search solver and with the DP oracle.

    Returns (solver value, oracle value). The solver uses a one-input head and
    the tail policy a*(-x) + b*x^2 + c, without head discounting.
    """
    model = ScalarLinearModel()
    one = np.eye(1)
    weights = CostWeights(Q=one, Q_ij=one, R=one, P=one, hbar=1.0)
    params = SolverParams(N=N, weights=weights, terminal=TerminalSet(one, np.inf), gain=[-1.0],
                          budget=budget)
    scenarios = build_scenarios(model, N, extra_scenarios, seed)
    result = solve(model, [x0], [], None, None, 1, params, scenarios,
                   warm_start=ControlPlan(head=(0.0,), tail=(0.0, 0.0, 0.0)))
    return result.value, dp_oracle(benchmark_instance(N, x0))
