"""Experiment runs, metrics and on-disk outputs."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import VARIANTS, ExperimentConfig, variant_settings
from .dynamics import estimate_lipschitz
from .netsim import World
from .protocol import quad, terminal_law
from .solver import SolverParams, build_scenarios

TRAJECTORY_COLUMNS = ["tick", "agent", "x1", "x2", "u", "triggered", "H", "V1", "VH", "fallback"]
DELAY_COLUMNS = ["tick", "link", "delay", "arrival"]
METRIC_COLUMNS = ["tick", "mu", "psi"]
TRIGGER_COLUMNS = ["tick", "agent", "H", "V1", "VH", "fallback", "feasible", "offset",
                   "consistency_dev", "solves", "in_omega"]


@dataclass
class MetricsRecord:
    mu: np.ndarray
    psi: np.ndarray
    T_bar: float
    J_bar: float
    triggers: dict
    fallbacks: dict


@dataclass
class RunResult:
    variant: str
    seed: int
    config: ExperimentConfig = field(repr=False)
    world: World = field(repr=False)
    metrics: MetricsRecord = field(repr=False)

    @property
    def states(self) -> np.ndarray:
        """Logged states, shape (steps, M, 2)."""
        return _per_tick(self.world, lambda r: r.x, self.config.steps, 2)

    @property
    def inputs(self) -> np.ndarray:
        return _per_tick(self.world, lambda r: r.u, self.config.steps)


def _per_tick(world, getter, steps, width=None):
    ids = sorted(world.agents)
    col = {i: k for k, i in enumerate(ids)}
    shape = (steps, len(ids)) if width is None else (steps, len(ids), width)
    out = np.zeros(shape)
    for rec in world.ticks:
        out[rec.tick, col[rec.agent]] = getter(rec)
    return out


def solver_params(cfg: ExperimentConfig) -> SolverParams:
    s = cfg.solver
    tb = s["tail_bounds"]
    return SolverParams(
        N=cfg.horizon, weights=cfg.weights, terminal=cfg.terminal, gain=cfg.kappa,
        delta=cfg.delta, budget=int(s["budget"]), shrink=float(s["shrink"]),
        initial_step=float(s["initial_step"]), penalty=float(s["penalty"]),
        tail_bounds=tuple(tuple(map(float, tb[k])) for k in ("a", "b", "c")))


def build_world(cfg: ExperimentConfig, variant: str | None = None, seed: int | None = None) -> World:
    variant = variant or cfg.variant
    seed = cfg.seed if seed is None else seed
    vs = variant_settings(cfg, variant)
    neighbors = cfg.graph if vs.distributed else {}
    scenarios = {
        i: build_scenarios(cfg.model, cfg.horizon, int(cfg.solver["extra_scenarios"]),
                           np.random.SeedSequence(seed, spawn_key=(0, i)))
        for i in cfg.agent_ids
    }
    return World(cfg.model, solver_params(cfg), neighbors, cfg.initial_states, vs.H_bar,
                 vs.tau_bar, scenarios, seed=seed, time_base=cfg.disturbance["time_base"],
                 w_amplitude=float(cfg.disturbance["w_amplitude"]),
                 v_amplitude=float(cfg.disturbance["v_amplitude"]))


def compute_metrics(cfg: ExperimentConfig, states, inputs, triggers: dict, fallbacks: dict) -> MetricsRecord:
    """Stabilization error, inter-agent difference, average sampling time and performance index.

    Coupling terms use the communication graph for every variant, including
    the decentralized ones whose controllers ignore it.
    """
    ids = cfg.agent_ids
    col = {i: k for k, i in enumerate(ids)}
    M = len(ids)
    steps = states.shape[0]
    own = quad(states, cfg.weights.Q)  # (steps, M)
    coupling = np.zeros((steps, M))
    for i in ids:
        for j in cfg.graph.get(i, []):
            coupling[:, col[i]] += quad(states[:, col[i]] - states[:, col[j]], cfg.weights.Q_ij)
    effort = inputs * inputs * cfg.weights.R[0, 0]
    mu = own.sum(axis=1) / M
    psi = coupling.sum(axis=1) / M
    J_bar = float((own + coupling + effort).sum() / M)
    if steps == 0:
        T_bar = 0.0
    else:
        T_bar = float(cfg.model.sample_period * np.mean([steps / triggers[i] for i in ids]))
    return MetricsRecord(mu=mu, psi=psi, T_bar=T_bar, J_bar=J_bar, triggers=dict(triggers),
                         fallbacks=dict(fallbacks))


def run(cfg: ExperimentConfig, variant: str | None = None, seed: int | None = None) -> RunResult:
    """Simulate ``cfg.steps`` ticks of one variant and compute its metrics."""
    variant = variant or cfg.variant
    seed = cfg.seed if seed is None else seed
    world = build_world(cfg, variant, seed)
    world.run(cfg.steps)
    states = _per_tick(world, lambda r: r.x, cfg.steps, 2)
    inputs = _per_tick(world, lambda r: r.u, cfg.steps)
    triggers = {i: a.triggers for i, a in world.agents.items()}
    fallbacks = {i: a.fallbacks for i, a in world.agents.items()}
    metrics = compute_metrics(cfg, states, inputs, triggers, fallbacks)
    return RunResult(variant=variant, seed=seed, config=cfg, world=world, metrics=metrics)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def summary(result: RunResult) -> dict:
    m = result.metrics
    return {
        "variant": result.variant,
        "seed": result.seed,
        "steps": result.config.steps,
        "T_bar": m.T_bar,
        "J_bar": m.J_bar,
        "triggers": {str(i): m.triggers[i] for i in sorted(m.triggers)},
        "fallbacks": {str(i): m.fallbacks[i] for i in sorted(m.fallbacks)},
    }


def write_outputs(result: RunResult, out_dir) -> list[Path]:
    """Write trajectories.csv, delays.csv, metrics.csv, triggers.csv and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = result.world
    paths = [out / name for name in
             ("trajectories.csv", "delays.csv", "metrics.csv", "triggers.csv", "summary.json")]
    _write_csv(paths[0], TRAJECTORY_COLUMNS, (
        [r.tick, r.agent, r.x[0], r.x[1], r.u, r.triggered, r.interval, r.value_1, r.value_H,
         r.fallback] for r in w.ticks))
    _write_csv(paths[1], DELAY_COLUMNS, (
        [r.tick, f"{r.src}->{r.dst}", r.delay, r.arrival] for r in w.delay_log))
    m = result.metrics
    _write_csv(paths[2], METRIC_COLUMNS, ([t, m.mu[t], m.psi[t]] for t in range(len(m.mu))))
    _write_csv(paths[3], TRIGGER_COLUMNS, (
        [r.tick, r.agent, r.interval, r.value_1, r.value_H, r.fallback, r.feasible, r.offset,
         r.consistency_deviation, r.solves, r.in_terminal_set] for r in w.trigger_log))
    paths[4].write_text(json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
    return paths


def _run_variant(args):
    cfg, variant, seed = args
    return run(cfg, variant, seed)


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("STMPC_THREADS", "1")))
    except ValueError:
        return 1


def run_batch(cfg: ExperimentConfig, variants=VARIANTS, seeds=None) -> list[RunResult]:
    """Run every (variant, seed) pair; parallel across processes when STMPC_THREADS > 1."""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    jobs = [(cfg, v, s) for s in seeds for v in variants]
    workers = min(thread_cap(), len(jobs))
    if workers <= 1:
        return [_run_variant(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_variant, jobs))


def table1(cfg: ExperimentConfig, out_dir, seeds=None) -> list[dict]:
    """Run all five variants, write each run to its own directory plus table1.csv."""
    out = Path(out_dir)
    results = run_batch(cfg, VARIANTS, seeds)
    rows = []
    for res in results:
        sub = out / res.variant if seeds is None else out / f"seed{res.seed}" / res.variant
        write_outputs(res, sub)
        rows.append(summary(res))
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "table1.csv", ["variant", "seed", "T_bar", "J_bar"],
               ([r["variant"], r["seed"], r["T_bar"], r["J_bar"]] for r in rows))
    return rows


def check_terminal_invariance(cfg: ExperimentConfig, count: int = 1000, seed: int = 0):
    """Sample states in the terminal set and admissible disturbances; apply kappa once.

    Returns (all successors inside, largest successor |x|_P^2 / rho^2).
    """
    rng = np.random.default_rng(seed)
    P = cfg.weights.P
    rho2 = cfg.rho ** 2
    # bounding box of the ellipse |x|_P <= rho
    half = np.sqrt(rho2 * np.diag(np.linalg.inv(P)))
    pts = []
    while sum(len(p) for p in pts) < count:
        x = rng.uniform(-half, half, size=(4 * count, 2))
        pts.append(x[quad(x, P) <= rho2])
    x = np.concatenate(pts)[:count]
    d = rng.uniform(cfg.model.disturbance_lower, cfg.model.disturbance_upper, size=(count, 2))
    u = terminal_law(x, cfg.kappa, cfg.model.input_box)
    nxt = cfg.model.f(x, u, d)
    ratio = float(quad(nxt, P).max() / rho2) if rho2 > 0 else float("inf")
    return bool(ratio <= 1.0), ratio


def validate(cfg: ExperimentConfig, samples: int = 100_000, seed: int = 0) -> dict:
    """Consistency-budget bound, sampled Lipschitz constants and terminal-set invariance.

    ``passed`` requires the configured delta to meet the bound (within
    ``delta_tolerance``) and the terminal-set sampling to succeed. The sampled
    Lipschitz estimates are reported next to the configured constants.
    """
    bound = cfg.delta_bound()
    nu_hat, xi_hat = estimate_lipschitz(cfg.model, samples, seed)
    rpi_ok, rpi_ratio = check_terminal_invariance(cfg, seed=seed)
    delta_ok = cfg.delta >= bound - cfg.delta_tolerance
    return {
        "delta": cfg.delta,
        "delta_bound": bound,
        "delta_ok": delta_ok,
        "nu": cfg.nu,
        "xi": cfg.xi,
        "nu_hat": nu_hat,
        "xi_hat": xi_hat,
        "lipschitz_within_config": nu_hat <= cfg.nu and xi_hat <= cfg.xi,
        "rpi_ok": rpi_ok,
        "rpi_max_ratio": rpi_ratio,
        "passed": bool(delta_ok and rpi_ok),
    }
