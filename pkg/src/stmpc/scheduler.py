"""Self-triggered interval selection."""
from __future__ import annotations

from dataclasses import dataclass

from .protocol import ControlPlan
from .solver import InitializationInfeasibleError, SolveResult, solve, to_head_plan

TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TriggerDecision:
    interval: int
    plan: ControlPlan
    value_H: float
    value_1: float
    next_trigger: int
    result: SolveResult
    fallback_used: bool
    solves: int


def within_tolerance(value_H: float, value_1: float, tol: float = TIE_TOLERANCE) -> bool:
    return value_H <= value_1 + tol * (1.0 + abs(value_1))


def select_interval(model, x0, neighbors, prev_msg, offset, params, scenarios, H_bar: int,
                    t: int = 0, candidate: ControlPlan | None = None,
                    tol: float = TIE_TOLERANCE) -> TriggerDecision:
    """Largest H in [1, H_bar] whose worst-case value does not exceed the H = 1 value.

    V^1 is solved first (warm-started from ``candidate``, which is also the
    fallback). Then H runs downward from H_bar, each solve warm-started from
    the H = 1 plan, and the first H passing the comparison is taken. H = 1
    always passes. A fallback at H = 1 forces interval 1.
    """
    if H_bar < 1:
        raise ValueError("H_bar must be >= 1")
    r1 = solve(model, x0, neighbors, prev_msg, offset, 1, params, scenarios,
               warm_start=candidate, fallback=candidate)
    solves = 1
    chosen_H, chosen = 1, r1
    if not r1.fallback_used:
        for H in range(H_bar, 1, -1):
            start = to_head_plan(model, x0, r1.plan, H, params.N, params.gain)
            solves += 1
            try:
                rH = solve(model, x0, neighbors, prev_msg, offset, H, params, scenarios,
                           warm_start=start)
            except InitializationInfeasibleError:
                continue
            if within_tolerance(rH.value, r1.value, tol):
                chosen_H, chosen = H, rH
                break
    return TriggerDecision(interval=chosen_H, plan=chosen.plan, value_H=chosen.value,
                           value_1=r1.value, next_trigger=t + chosen_H, result=chosen,
                           fallback_used=r1.fallback_used, solves=solves)
