"""Costs, terminal ingredients and the broadcast/consistency protocol between agents."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ProtocolError(RuntimeError):
    """A message was read outside its valid window (a delay or interval bound was violated)."""


def _as_matrix(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.allclose(a, a.T):
        raise ValueError(f"{name} must be symmetric")
    return a


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    Q_ij: np.ndarray
    R: np.ndarray
    P: np.ndarray
    hbar: float = 1.1

    def __post_init__(self):
        for name in ("Q", "Q_ij", "R", "P"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        for name in ("Q", "Q_ij"):
            if np.linalg.eigvalsh(getattr(self, name)).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        for name in ("R", "P"):
            if np.linalg.eigvalsh(getattr(self, name)).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        # hbar == 1 is allowed so that the unweighted N-stage cost can be expressed
        if not self.hbar >= 1.0:
            raise ValueError(f"hbar must be >= 1, got {self.hbar}")


@dataclass(frozen=True)
class TerminalSet:
    P: np.ndarray
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "P", _as_matrix(self.P, "P"))
        if not self.rho >= 0:
            raise ValueError("rho must be nonnegative")

    @property
    def inner_radius(self) -> float:
        """Euclidean radius bound of the set, rho / sqrt(lambda_min(P))."""
        lam = np.linalg.eigvalsh(self.P).min()
        if self.rho == 0:
            return 0.0
        return float(self.rho / np.sqrt(lam))


@dataclass(frozen=True)
class BroadcastMessage:
    sender: int
    origin_time: int
    interval: int
    tau_bar: int
    horizon: int
    states: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class ControlPlan:
    """Open-loop head inputs followed by the feedback tail policy.

    For stage ``s``: ``head[s]`` if ``s < len(head)``; otherwise
    ``clip(a*kappa(x) + b*|x|^2 + c)`` with ``(a, b, c) = tail``. When
    ``terminal_from`` is set, plain ``clip(kappa(x))`` is used from that stage
    on (only candidate plans built by :func:`candidate_plan` use this).
    """

    head: tuple[float, ...]
    tail: tuple[float, float, float] = (0.0, 0.0, 0.0)
    terminal_from: int | None = None

    @property
    def interval(self) -> int:
        return len(self.head)


def quad(x, M) -> np.ndarray:
    """Batched squared weighted norm x' M x over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.einsum("...i,ij,...j->...", x, M, x)


def stage_cost(x, x_neighbors, u, w: CostWeights) -> float:
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[-1] != w.Q.shape[0]:
        raise ValueError(f"state dimension {x.shape[-1]} does not match Q {w.Q.shape}")
    if u.shape[-1] != w.R.shape[0]:
        raise ValueError(f"input dimension {u.shape[-1]} does not match R {w.R.shape}")
    cost = quad(x, w.Q) + quad(u, w.R)
    for xj in x_neighbors:
        xj = np.asarray(xj, dtype=float)
        if xj.shape[-1] != x.shape[-1]:
            raise ValueError("neighbor state dimension mismatch")
        cost = cost + quad(x - xj, w.Q_ij)
    return float(cost)


def terminal_cost(x, w) -> float:
    """|x|_P^2; ``w`` may be a CostWeights or a TerminalSet."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.P.shape[0]:
        raise ValueError(f"state dimension {x.shape[-1]} does not match P {w.P.shape}")
    return float(quad(x, w.P))


def in_terminal_set(x, ts: TerminalSet) -> bool:
    return bool(terminal_cost(x, ts) <= ts.rho ** 2)


def terminal_law(x, gain, input_box) -> np.ndarray:
    """kappa(x) = K x, saturated at the input box."""
    u = np.asarray(x, dtype=float) @ np.asarray(gain, dtype=float)
    return np.clip(u, input_box[0], input_box[1])


def pad_broadcast(optimal_states, interval: int, tau_bar: int, N: int,
                  sender: int = 0, origin_time: int = 0) -> BroadcastMessage:
    """Predictions on [0, N) followed by zeros up to index interval + tau_bar + N."""
    optimal_states = np.asarray(optimal_states, dtype=float)
    if optimal_states.ndim != 2 or len(optimal_states) != N:
        raise ValueError(f"expected {N} predicted states, got shape {optimal_states.shape}")
    if interval < 1:
        raise ValueError("interval must be >= 1")
    states = np.zeros((interval + tau_bar + N + 1, optimal_states.shape[1]))
    states[:N] = optimal_states
    states.setflags(write=False)
    return BroadcastMessage(sender=sender, origin_time=origin_time, interval=interval,
                            tau_bar=tau_bar, horizon=N, states=states)


def message_offset(msg: BroadcastMessage, local_time: int) -> int:
    offset = local_time - msg.origin_time
    if offset < 0:
        raise ProtocolError(
            f"message from agent {msg.sender} originates at {msg.origin_time}, after local time {local_time}")
    if offset > msg.interval + msg.tau_bar:
        raise ProtocolError(
            f"message from agent {msg.sender} read at offset {offset} > interval {msg.interval}"
            f" + tau_bar {msg.tau_bar}")
    return offset


def assemble_neighbor_traj(msg: BroadcastMessage, local_time: int) -> np.ndarray:
    """The N message entries aligned to ``local_time``."""
    offset = message_offset(msg, local_time)
    return msg.states[offset:offset + msg.horizon].copy()


def consistency_satisfied(pred, prev_msg: BroadcastMessage, offset: int, delta: float) -> bool:
    pred = np.asarray(pred, dtype=float)
    if offset < 0 or offset + len(pred) > len(prev_msg.states):
        raise ProtocolError(
            f"offset {offset} with {len(pred)} predictions overruns message of length {len(prev_msg)}")
    ref = prev_msg.states[offset:offset + len(pred)]
    return bool(np.all(np.linalg.norm(pred - ref, axis=-1) <= delta))


def validate_delta(nu: float, xi: float, d_bar: float, N: int, H_bar: int, ts: TerminalSet) -> float:
    """Lower bound on the consistency budget that keeps the shifted plan consistent.

    max{nu^(N-1-H_bar) * phi, rho / sqrt(lambda_min(P))} with
    phi = 2 * xi * d_bar * sum_{s=0}^{2 H_bar} nu^s (worst-case window of H_bar ticks).
    """
    phi = 2.0 * xi * d_bar * sum(nu ** s for s in range(2 * H_bar + 1))
    exponent = N - 1 - H_bar
    if nu > 0:
        scale = nu ** exponent
    else:
        scale = 1.0 if exponent == 0 else (0.0 if exponent > 0 else np.inf)
    return float(max(scale * phi, ts.inner_radius))


def candidate_plan(prev, applied_interval: int) -> ControlPlan:
    """Shift a previous solution by the applied interval and append the terminal law.

    ``prev`` is a SolveResult. The shifted stages keep the previous head
    entries beyond ``applied_interval`` and the previous tail policy; the last
    ``applied_interval`` stages use kappa.
    """
    N = len(prev.predicted_states) - 1
    if not 1 <= applied_interval <= N:
        raise ValueError(f"applied_interval must lie in [1, {N}]")
    plan = prev.plan
    terminal_from = N - applied_interval
    if plan.terminal_from is not None:
        terminal_from = min(terminal_from, max(plan.terminal_from - applied_interval, 0))
    return ControlPlan(head=tuple(plan.head[applied_interval:]), tail=plan.tail,
                       terminal_from=terminal_from)
