"""Discrete-time orchestration of agents, delayed links and the true plants.

Within one tick the order is: deliver messages whose arrival tick has come,
let every agent whose trigger is due solve and broadcast (ascending id),
then advance every plant by one step with its queued input.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import step
from .protocol import (BroadcastMessage, ProtocolError, assemble_neighbor_traj, candidate_plan,
                       in_terminal_set, message_offset, pad_broadcast)
from .scheduler import select_interval
from .solver import SolveResult, plan_inputs


def link_rng(seed: int, src: int, dst: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, src, dst)))


@dataclass
class Link:
    src: int
    dst: int
    tau_bar: int
    rng: np.random.Generator | None = None
    last_arrival: int = -1
    in_transit: deque = field(default_factory=deque)


def send(link: Link, msg: BroadcastMessage, t: int, rng=None) -> tuple[int, int]:
    """Queue ``msg`` on ``link``; returns (delay, arrival tick).

    The first broadcast (t = 0) and delay-free links (tau_bar = 0) use delay 0.
    Otherwise the delay is uniform on [1, tau_bar]. Arrivals are pushed to at
    least one tick after the previous arrival so messages never overtake.
    """
    if msg.origin_time != t:
        raise ValueError("messages must be sent at their origin time")
    rng = link.rng if rng is None else rng
    if t == 0 or link.tau_bar == 0:
        delay = 0
    else:
        delay = int(rng.integers(1, link.tau_bar + 1))
    arrival = max(t + delay, link.last_arrival + 1)
    link.last_arrival = arrival
    link.in_transit.append((arrival, msg))
    return delay, arrival


class Mailbox:
    """Messages delivered to one agent, per sender, in arrival order."""

    def __init__(self):
        self.delivered: dict[int, list[BroadcastMessage]] = {}

    def deliver(self, msg: BroadcastMessage):
        self.delivered.setdefault(msg.sender, []).append(msg)

    def has(self, j: int) -> bool:
        return bool(self.delivered.get(j))


def newest_available(mailbox: Mailbox, j: int, t: int) -> BroadcastMessage:
    """Delivered message from ``j`` with the latest origin strictly before ``t``."""
    best = None
    for msg in mailbox.delivered.get(j, ()):
        if msg.origin_time < t and (best is None or msg.origin_time > best.origin_time):
            best = msg
    if best is None:
        raise ProtocolError(f"no message from agent {j} available at t={t}")
    return best


def actual_disturbance(t: int, sample_period: float, time_base: str = "tick",
                       w_amplitude: float = 0.1, v_amplitude: float = 0.15) -> np.ndarray:
    """Realized (w, v): w = w_amp sin(t / 4pi), v = v_amp cos(t / 3pi)."""
    tau = t if time_base == "tick" else t * sample_period
    return np.array([w_amplitude * math.sin(tau / (4 * math.pi)),
                     v_amplitude * math.cos(tau / (3 * math.pi))])


@dataclass
class AgentState:
    id: int
    x: np.ndarray
    scenarios: object
    queue: deque = field(default_factory=deque)
    last_trigger: int | None = None
    next_trigger: int = 0
    last_broadcast: BroadcastMessage | None = None
    last_result: SolveResult | None = None
    broadcasts: dict = field(default_factory=dict)
    triggers: int = 0
    fallbacks: int = 0


@dataclass
class TickRecord:
    tick: int
    agent: int
    x: np.ndarray
    u: float
    d: np.ndarray
    triggered: bool
    interval: int | None = None
    value_1: float | None = None
    value_H: float | None = None
    fallback: bool | None = None


@dataclass
class TriggerRecord:
    tick: int
    agent: int
    interval: int
    value_1: float
    value_H: float
    fallback: bool
    feasible: bool
    offset: int | None
    consistency_deviation: float
    solves: int
    in_terminal_set: bool
    predicted_states: np.ndarray = field(repr=False)


@dataclass
class DelayRecord:
    tick: int
    src: int
    dst: int
    delay: int
    arrival: int


@dataclass
class AssemblyRecord:
    tick: int
    agent: int
    neighbor: int
    origin: int
    offset: int
    limit: int
    case: int


class World:
    """All agents, links and logs of one closed-loop run."""

    def __init__(self, model, params, neighbors: dict, initial_states: dict, H_bar: int,
                 tau_bar: int, scenarios: dict, seed: int = 0, time_base: str = "tick",
                 w_amplitude: float = 0.1, v_amplitude: float = 0.15, terminal=None):
        self.model = model
        self.params = params
        self.N = params.N
        self.H_bar = H_bar
        self.tau_bar = tau_bar
        self.neighbors = {i: list(neighbors.get(i, [])) for i in initial_states}
        self.time_base = time_base
        self.w_amplitude = w_amplitude
        self.v_amplitude = v_amplitude
        self.terminal = terminal if terminal is not None else params.terminal
        self.clock = 0
        self.agents = {i: AgentState(id=i, x=np.asarray(x0, dtype=float), scenarios=scenarios[i])
                       for i, x0 in sorted(initial_states.items())}
        self.mailboxes = {i: Mailbox() for i in self.agents}
        self.links: dict[tuple[int, int], Link] = {}
        for i in sorted(self.agents):
            for j in self.neighbors[i]:
                if j not in self.agents:
                    raise ValueError(f"agent {i} lists unknown neighbor {j}")
                self.links[(j, i)] = Link(src=j, dst=i, tau_bar=tau_bar, rng=link_rng(seed, j, i))
        self.ticks: list[TickRecord] = []
        self.trigger_log: list[TriggerRecord] = []
        self.delay_log: list[DelayRecord] = []
        self.assembly_log: list[AssemblyRecord] = []

    def _deliver(self, t):
        for key in sorted(self.links):
            link = self.links[key]
            while link.in_transit and link.in_transit[0][0] <= t:
                _, msg = link.in_transit.popleft()
                self.mailboxes[link.dst].deliver(msg)

    def _neighbor_trajectories(self, i, t):
        trajs = []
        for j in self.neighbors[i]:
            box = self.mailboxes[i]
            if not box.has(j) and t == 0:
                # before any delivery the neighbors' predictions are taken as zero
                trajs.append(np.zeros((self.N, self.model.n)))
                continue
            msg = newest_available(box, j, t)
            offset = message_offset(msg, t)
            sender_times = [k for k in self.agents[j].broadcasts if k < t]
            case = 1 if sender_times and msg.origin_time == max(sender_times) else 2
            self.assembly_log.append(AssemblyRecord(
                tick=t, agent=i, neighbor=j, origin=msg.origin_time, offset=offset,
                limit=msg.interval + msg.tau_bar, case=case))
            trajs.append(assemble_neighbor_traj(msg, t))
        return trajs

    def _trigger(self, agent: AgentState, t: int):
        i = agent.id
        trajs = self._neighbor_trajectories(i, t)
        offset = None if agent.last_trigger is None else t - agent.last_trigger
        candidate = None
        if agent.last_result is not None:
            candidate = candidate_plan(agent.last_result, offset)
        decision = select_interval(self.model, agent.x, trajs, agent.last_broadcast, offset,
                                   self.params, agent.scenarios, self.H_bar, t=t,
                                   candidate=candidate)
        H = decision.interval
        inputs, _ = plan_inputs(self.model, agent.x, decision.plan, self.N, self.params.gain)
        agent.queue = deque(float(u) for u in inputs[:H])
        predicted = decision.result.predicted_states
        msg = pad_broadcast(predicted[:self.N], H, self.tau_bar, self.N, sender=i, origin_time=t)
        for key in sorted(self.links):
            if key[0] == i:
                delay, arrival = send(self.links[key], msg, t)
                self.delay_log.append(DelayRecord(tick=t, src=i, dst=key[1], delay=delay,
                                                  arrival=arrival))
        self.trigger_log.append(TriggerRecord(
            tick=t, agent=i, interval=H, value_1=decision.value_1, value_H=decision.value_H,
            fallback=decision.fallback_used, feasible=decision.result.feasible, offset=offset,
            consistency_deviation=decision.result.consistency_deviation, solves=decision.solves,
            in_terminal_set=in_terminal_set(agent.x, self.terminal),
            predicted_states=predicted))
        agent.last_trigger = t
        agent.next_trigger = t + H
        agent.last_broadcast = msg
        agent.broadcasts[t] = msg
        agent.last_result = decision.result
        agent.triggers += 1
        agent.fallbacks += int(decision.fallback_used)
        return decision

    def tick(self):
        t = self.clock
        self._deliver(t)
        decisions = {}
        for i in sorted(self.agents):
            agent = self.agents[i]
            if agent.next_trigger == t:
                decisions[i] = self._trigger(agent, t)
        d = actual_disturbance(t, self.model.sample_period, self.time_base,
                               self.w_amplitude, self.v_amplitude)
        for i in sorted(self.agents):
            agent = self.agents[i]
            if not agent.queue:
                raise RuntimeError(f"agent {i} has no queued input at t={t}")
            u = agent.queue.popleft()
            dec = decisions.get(i)
            self.ticks.append(TickRecord(
                tick=t, agent=i, x=agent.x.copy(), u=u, d=d, triggered=dec is not None,
                interval=None if dec is None else dec.interval,
                value_1=None if dec is None else dec.value_1,
                value_H=None if dec is None else dec.value_H,
                fallback=None if dec is None else dec.fallback_used))
            agent.x = step(self.model, agent.x, u, d)
        self.clock = t + 1
        return self

    def run(self, steps: int):
        for _ in range(steps):
            self.tick()
        return self


def tick(world: World) -> World:
    return world.tick()
