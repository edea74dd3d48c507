"""Scenario min-max solver for the local problem of one agent.

The decision variables are the ``H`` open-loop head inputs and the three
coefficients ``(a, b, c)`` of the tail policy ``a*kappa(x) + b*|x|^2 + c``.
The inner maximization runs over a finite set of disturbance sequences and
the outer minimization is a deterministic coordinate pattern search on a
penalized objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .protocol import BroadcastMessage, ControlPlan, CostWeights, ProtocolError, TerminalSet, quad


class InitializationInfeasibleError(RuntimeError):
    """No feasible plan at the first trigger and no previous solution to fall back on."""


@dataclass(frozen=True)
class ScenarioSet:
    """Disturbance sequences, shape (S, N, d); row 0 is the zero sequence."""

    scenarios: np.ndarray

    def __len__(self):
        return len(self.scenarios)

    @property
    def horizon(self) -> int:
        return self.scenarios.shape[1]

    def union(self, other: "ScenarioSet") -> "ScenarioSet":
        return ScenarioSet(np.concatenate([self.scenarios, other.scenarios]))


@dataclass(frozen=True)
class SolverParams:
    N: int
    weights: CostWeights
    terminal: TerminalSet
    gain: np.ndarray
    delta: float = np.inf
    budget: int = 400
    shrink: float = 0.5
    initial_step: float = 0.1
    min_step: float = 1e-9
    penalty: float = 1e6
    tail_bounds: tuple = ((-3.0, 3.0), (-2.0, 2.0), (-4.0, 4.0))
    check_initial_state: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gain", np.asarray(self.gain, dtype=float).reshape(-1))


@dataclass(frozen=True)
class SolveResult:
    plan: ControlPlan
    value: float
    feasible: bool
    fallback_used: bool
    binding_scenario: int
    predicted_states: np.ndarray = field(repr=False)
    consistency_deviation: float = float("nan")
    evaluations: int = 0


def build_scenarios(model, N: int, extra_count: int, seed: int) -> ScenarioSet:
    """Zero sequence, the constant box vertices, then random per-step vertex sequences."""
    if extra_count < 0:
        raise ValueError("extra_count must be >= 0")
    lo = np.asarray(model.disturbance_lower, dtype=float)
    hi = np.asarray(model.disturbance_upper, dtype=float)
    nd = len(lo)
    signs = np.array(np.meshgrid(*[[0, 1]] * nd, indexing="ij")).reshape(nd, -1).T
    vertices = np.where(signs == 1, hi, lo)
    rows = [np.zeros((N, nd))]
    rows += [np.tile(v, (N, 1)) for v in vertices]
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, 2, size=(extra_count, N, nd))
    rows += list(np.where(picks == 1, hi, lo))
    return ScenarioSet(np.array(rows).reshape(len(rows), N, nd))


def _neighbor_array(neighbors, N, n):
    if neighbors is None or len(neighbors) == 0:
        return np.zeros((N, 0, n))
    arr = np.stack([np.asarray(nb, dtype=float) for nb in neighbors], axis=1)
    if arr.shape[0] != N or arr.shape[2] != n:
        raise ValueError(f"neighbor trajectories must have shape ({N}, {n}); got {arr.shape}")
    return arr


class _Problem:
    """Batched evaluation of head/tail plans over all scenarios for one agent."""

    def __init__(self, model, x0, neighbors, scenarios, H, params, prev_states=None):
        self.model = model
        self.params = params
        self.H = H
        self.N = params.N
        self.x0 = np.asarray(x0, dtype=float)
        self.n = self.x0.shape[-1]
        self.neighbors = _neighbor_array(neighbors, self.N, self.n)
        scen = scenarios.scenarios if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
        if scen.shape[1] != self.N:
            raise ValueError(f"scenario horizon {scen.shape[1]} != N={self.N}")
        self.scen = scen
        self.prev_states = prev_states
        self.xlo = np.asarray(model.state_lower, dtype=float)
        self.xhi = np.asarray(model.state_upper, dtype=float)
        self.bounded = np.flatnonzero(np.isfinite(self.xlo) | np.isfinite(self.xhi))
        self.ulo, self.uhi = model.input_box
        # sum_j |x - x_j|^2_Qij = k x'Qij x - x'lin + const
        w = params.weights
        k = self.neighbors.shape[1]
        self.A = w.Q + k * w.Q_ij
        nb_sum = self.neighbors.sum(axis=1)  # (N, n)
        self.lin = 2.0 * nb_sum @ w.Q_ij
        self.const = np.einsum("sji,ik,sjk->s", self.neighbors, w.Q_ij, self.neighbors)

    def _state_excess(self, x):
        xb = x[..., self.bounded]
        lo = self.xlo[self.bounded]
        hi = self.xhi[self.bounded]
        return (np.maximum(xb - hi, 0.0) + np.maximum(lo - xb, 0.0)).sum(axis=-1)

    def _deviation_excess(self, x, ref):
        dev = np.sqrt(((x - ref) ** 2).sum(axis=-1))
        return np.maximum(dev - self.params.delta, 0.0)

    def evaluate(self, heads, tails, terminal_from=None):
        """Return (cost, violation, states) with shapes (B, S), (B, S), (B, S, N+1, n).

        ``heads`` may have fewer columns than the weighting horizon ``H``.
        """
        p = self.params
        w = p.weights
        scen = self.scen
        n_head = heads.shape[1]
        terminal_from = self.N if terminal_from is None else terminal_from
        B, S = heads.shape[0], scen.shape[0]
        x = np.broadcast_to(self.x0, (B, S, self.n)).copy()
        states = np.empty((B, S, self.N + 1, self.n))
        cost = np.zeros((B, S))
        viol = np.zeros((B, S))
        a = tails[:, 0, None]
        b = tails[:, 1, None]
        c = tails[:, 2, None]
        R = w.R[0, 0]
        inv_hbar = 1.0 / w.hbar
        for s in range(self.N):
            states[:, :, s] = x
            if s > 0 or p.check_initial_state:
                viol += self._state_excess(x)
            if self.prev_states is not None:
                viol += self._deviation_excess(x, self.prev_states[s])
            if s < n_head:
                u = np.broadcast_to(heads[:, s, None], (B, S))
                viol += np.maximum(u - self.uhi, 0.0) + np.maximum(self.ulo - u, 0.0)
            else:
                kx = x @ p.gain
                if s >= terminal_from:
                    u = np.clip(kx, self.ulo, self.uhi)
                else:
                    u = np.clip(a * kx + b * (x * x).sum(axis=-1) + c, self.ulo, self.uhi)
            stage = ((x @ self.A) * x).sum(axis=-1) - x @ self.lin[s] + self.const[s] + R * u * u
            cost += stage * inv_hbar if s < self.H else stage
            x = self.model.f(x, u, scen[None, :, s])
        states[:, :, self.N] = x
        fin = ((x @ p.terminal.P) * x).sum(axis=-1)
        cost += ((x @ w.P) * x).sum(axis=-1)
        viol += np.maximum(fin - p.terminal.rho ** 2, 0.0)
        viol += self._state_excess(x)
        if self.prev_states is not None:
            viol += self._deviation_excess(x, self.prev_states[self.N])
        return cost, viol, states

    def consistency_deviation(self, states):
        if self.prev_states is None:
            return float("nan")
        return float(np.linalg.norm(states - self.prev_states[:self.N + 1], axis=-1).max())


def _prev_states(prev_msg: BroadcastMessage | None, offset, N):
    if prev_msg is None:
        return None
    if offset is None or offset < 0 or offset + N + 1 > len(prev_msg.states):
        raise ProtocolError(f"offset {offset} overruns previous broadcast of length {len(prev_msg)}")
    return prev_msg.states[offset:offset + N + 1]


def worst_case_objective(model, x0, neighbors, plan: ControlPlan, scenarios, H,
                         w: CostWeights, N: int | None = None, gain=None):
    """Maximum over scenarios of the head-weighted horizon cost; returns (V, index)."""
    scen = scenarios.scenarios if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    N = scen.shape[1] if N is None else N
    n = np.asarray(x0).shape[-1]
    gain = np.zeros(n) if gain is None else gain
    params = SolverParams(N=N, weights=w, terminal=TerminalSet(w.P, np.inf), gain=gain)
    prob = _Problem(model, x0, neighbors, scen, H, params)
    cost = _evaluate_plan(prob, plan)[0]
    k = int(np.argmax(cost))
    return float(cost[k]), k


def _evaluate_plan(prob: _Problem, plan: ControlPlan):
    """Evaluate one plan; its head may be shorter than the weighting horizon."""
    heads = np.asarray(plan.head, dtype=float).reshape(1, -1)
    tails = np.asarray(plan.tail, dtype=float).reshape(1, 3)
    cost, viol, states = prob.evaluate(heads, tails, terminal_from=plan.terminal_from)
    return cost[0], viol[0], states[0]


def plan_inputs(model, x0, plan: ControlPlan, N: int, gain, disturbances=None):
    """Inputs and states of ``plan`` along one disturbance sequence (zero by default)."""
    x = np.asarray(x0, dtype=float)
    gain = np.asarray(gain, dtype=float)
    d = np.zeros((N, len(model.disturbance_lower))) if disturbances is None else disturbances
    lo, hi = model.input_box
    a, b, c = plan.tail
    inputs, states = [], [x]
    for s in range(N):
        if s < len(plan.head):
            u = float(plan.head[s])
        else:
            kx = float(x @ gain)
            if plan.terminal_from is not None and s >= plan.terminal_from:
                u = float(np.clip(kx, lo, hi))
            else:
                u = float(np.clip(a * kx + b * float(x @ x) + c, lo, hi))
        inputs.append(u)
        x = model.f(x, u, d[s])
        states.append(x)
    return np.array(inputs), np.array(states)


def to_head_plan(model, x0, plan: ControlPlan, H: int, N: int, gain) -> ControlPlan:
    """Re-express ``plan`` with an H-entry open-loop head (nominal inputs) and the same tail."""
    inputs, _ = plan_inputs(model, x0, plan, N, gain)
    lo, hi = model.input_box
    head = tuple(float(np.clip(u, lo, hi)) for u in inputs[:H])
    return ControlPlan(head=head, tail=plan.tail)


def feasible(model, x0, plan: ControlPlan, scenarios, prev_msg, offset, ts: TerminalSet, delta,
             N: int | None = None, gain=None, check_initial_state: bool = True) -> bool:
    """Constraint check of a plan along every scenario rollout.

    Inputs in the box, states in the box, consistency with ``prev_msg`` (skipped
    when it is None) and terminal state in the terminal set.
    """
    scen = scenarios.scenarios if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    N = scen.shape[1] if N is None else N
    n = np.asarray(x0).shape[-1]
    gain = np.zeros(n) if gain is None else gain
    w = CostWeights(Q=np.eye(n), Q_ij=np.eye(n), R=np.eye(1), P=ts.P, hbar=1.0)
    params = SolverParams(N=N, weights=w, terminal=ts, gain=gain, delta=delta,
                          check_initial_state=check_initial_state)
    prob = _Problem(model, x0, None, scen, len(plan.head), params,
                    _prev_states(prev_msg, offset, N))
    _, viol, _ = _evaluate_plan(prob, plan)
    return bool(np.all(viol == 0.0))


def pattern_search(fun, z0, lower, upper, budget, initial_step=0.1, shrink=0.5, min_step=1e-9):
    """Deterministic coordinate pattern search with complete polling.

    Each iteration evaluates ``z -/+ step_i e_i`` for every coordinate in one
    batch, moves to the best strict improvement (first index on ties) and
    halves the step when none improves. ``fun`` maps a (B, n) array to a
    length-B array. Returns (z, f(z), evaluations, all_points, all_values).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    z = np.clip(np.asarray(z0, dtype=float), lower, upper)
    n = len(z)
    fz = float(fun(z[None])[0])
    evals = 1
    step = initial_step * (upper - lower)
    history_z = [z[None]]
    history_f = [np.array([fz])]
    while evals + 2 * n <= budget and np.any(step > min_step):
        cand = np.repeat(z[None], 2 * n, axis=0)
        idx = np.arange(n)
        cand[2 * idx, idx] -= step
        cand[2 * idx + 1, idx] += step
        np.clip(cand, lower, upper, out=cand)
        fc = fun(cand)
        evals += 2 * n
        history_z.append(cand)
        history_f.append(fc)
        j = int(np.argmin(fc))
        if fc[j] < fz:
            z, fz = cand[j].copy(), float(fc[j])
        else:
            step = step * shrink
    return z, fz, evals, np.concatenate(history_z), np.concatenate(history_f)


def solve(model, x0, neighbors, prev_msg: BroadcastMessage | None, offset, H: int,
          params: SolverParams, scenarios: ScenarioSet, warm_start: ControlPlan | None = None,
          fallback: ControlPlan | None = None) -> SolveResult:
    """Minimize the worst-case objective over the head inputs and the tail coefficients.

    The search starts at ``warm_start`` (re-expressed with an H-entry head)
    or at ``fallback`` or at the zero plan. If no evaluated point is strictly
    feasible, ``fallback`` is returned with ``fallback_used=True``; without a
    fallback this raises InitializationInfeasibleError.
    """
    if H < 1 or H > params.N:
        raise ValueError(f"H must lie in [1, {params.N}], got {H}")
    x0 = np.asarray(x0, dtype=float)
    prev_states = _prev_states(prev_msg, offset, params.N)
    prob = _Problem(model, x0, neighbors, scenarios, H, params, prev_states)

    start = warm_start if warm_start is not None else fallback
    if start is None:
        z0 = np.zeros(H + 3)
    else:
        if len(start.head) < H or start.terminal_from is not None:
            start = to_head_plan(model, x0, start, H, params.N, params.gain)
        z0 = np.concatenate([np.asarray(start.head[:H], dtype=float), start.tail])

    ulo, uhi = model.input_box
    lower = np.array([ulo] * H + [b[0] for b in params.tail_bounds])
    upper = np.array([uhi] * H + [b[1] for b in params.tail_bounds])

    best = {"v": np.inf, "z": None}

    def merit(Z):
        cost, viol, _ = prob.evaluate(Z[:, :H], Z[:, H:])
        V = cost.max(axis=1)
        tot = viol.sum(axis=1)
        ok = tot == 0.0
        if ok.any():
            k = int(np.argmin(np.where(ok, V, np.inf)))
            if V[k] < best["v"]:
                best["v"], best["z"] = float(V[k]), Z[k].copy()
        return V + params.penalty * tot

    z, _, evals, _, _ = pattern_search(merit, z0, lower, upper, params.budget,
                                       params.initial_step, params.shrink, params.min_step)

    cost, viol, states = prob.evaluate(z[None, :H], z[None, H:])
    if viol.sum() != 0.0 and best["z"] is not None:
        z = best["z"]
        cost, viol, states = prob.evaluate(z[None, :H], z[None, H:])
    if viol.sum() == 0.0:
        plan = ControlPlan(head=tuple(float(u) for u in z[:H]), tail=tuple(float(t) for t in z[H:]))
        k = int(np.argmax(cost[0]))
        return SolveResult(plan=plan, value=float(cost[0, k]), feasible=True, fallback_used=False,
                           binding_scenario=k, predicted_states=states[0, 0].copy(),
                           consistency_deviation=prob.consistency_deviation(states[0]),
                           evaluations=evals)

    if fallback is None:
        raise InitializationInfeasibleError(
            f"no feasible plan found from x0={x0.tolist()} (H={H}, min violation "
            f"{float(viol.sum()):.3g}) and no previous solution to fall back on")
    cost, viol, states = _evaluate_plan(prob, fallback)
    k = int(np.argmax(cost))
    return SolveResult(plan=fallback, value=float(cost[k]), feasible=bool(viol.sum() == 0.0),
                       fallback_used=True, binding_scenario=k, predicted_states=states[0].copy(),
                       consistency_deviation=prob.consistency_deviation(states),
                       evaluations=evals)
