"""Agent plant model: Euler-discretized mass-spring-damper with a nonlinear spring.

    x1+ = x1 + T*x2
    x2+ = x2 - (T/m) * (k' exp(-x1) x1 + h' x2 - u + v x2 - w)

All stepping functions broadcast over leading axes so that a batch of
disturbance scenarios (or of candidate plans) can be rolled out at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteValueError(ValueError):
    """Raised when a state, input or disturbance contains NaN or Inf."""


@dataclass(frozen=True)
class AgentModel:
    mass: float = 1.0
    spring: float = 0.33
    damping: float = 1.1
    sample_period: float = 0.3
    input_box: tuple[float, float] = (-4.0, 4.0)
    position_bound: float = 1.95
    w_bound: float = 0.1
    v_bound: float = 0.15
    # x2 is unconstrained; this box is only used when sampling Lipschitz pairs
    velocity_sample_box: tuple[float, float] = (-3.0, 3.0)

    n = 2
    m = 1

    def __post_init__(self):
        lo, hi = self.input_box
        if not lo <= 0.0 <= hi:
            raise ValueError(f"input_box {self.input_box} must contain 0")
        if self.w_bound < 0 or self.v_bound < 0:
            raise ValueError("disturbance bounds must be nonnegative")
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    @property
    def state_lower(self) -> np.ndarray:
        return np.array([-self.position_bound, -np.inf])

    @property
    def state_upper(self) -> np.ndarray:
        return np.array([self.position_bound, np.inf])

    @property
    def disturbance_lower(self) -> np.ndarray:
        return np.array([-self.w_bound, -self.v_bound])

    @property
    def disturbance_upper(self) -> np.ndarray:
        return np.array([self.w_bound, self.v_bound])

    @property
    def d_bar(self) -> float:
        """Largest Euclidean norm of an admissible disturbance."""
        return float(np.hypot(self.w_bound, self.v_bound))

    def f(self, x, u, d):
        """Vectorized successor map; no finiteness checks."""
        x1 = x[..., 0]
        x2 = x[..., 1]
        w = d[..., 0]
        v = d[..., 1]
        c = self.sample_period / self.mass
        nx1 = x1 + self.sample_period * x2
        nx2 = x2 - c * (self.spring * np.exp(-x1) * x1 + self.damping * x2 - u + v * x2 - w)
        return np.stack([nx1, nx2], axis=-1)


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteValueError(f"{name} contains non-finite entries: {value!r}")


def step(model, x, u, d) -> np.ndarray:
    """One sample-period transition x+ = f(x, u, d)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    _check_finite("x", x)
    _check_finite("u", u)
    _check_finite("d", d)
    return model.f(x, u, d)


def rollout(model, x0, inputs, disturbances) -> np.ndarray:
    """Open-loop state sequence of length L+1 starting at ``x0``."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    disturbances = np.asarray(disturbances, dtype=float)
    if disturbances.ndim == 1:
        disturbances = disturbances.reshape(len(inputs), -1) if len(inputs) else disturbances.reshape(0, -1)
    if len(inputs) != len(disturbances):
        raise ValueError(
            f"inputs ({len(inputs)}) and disturbances ({len(disturbances)}) differ in length")
    x = np.asarray(x0, dtype=float)
    _check_finite("x0", x)
    states = [x]
    for u, d in zip(inputs, disturbances):
        x = step(model, x, u, d)
        states.append(x)
    return np.array(states)


def estimate_lipschitz(model, sample_count: int, seed: int = 0) -> tuple[float, float]:
    """Sampled lower estimates of the state and disturbance Lipschitz constants.

    Pairs are drawn uniformly from the position constraint box, the
    ``velocity_sample_box``, the input box and the disturbance box. Rows are
    drawn in a fixed order, so the estimates for a prefix of the samples
    equal the estimates for a smaller ``sample_count`` with the same seed.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    # columns: x(2) y(2) u d(2) d'(2)
    r = rng.random((sample_count, 9))
    lo = np.concatenate([
        [-model.position_bound, model.velocity_sample_box[0]] * 2,
        [model.input_box[0]],
        model.disturbance_lower, model.disturbance_lower,
    ])
    hi = np.concatenate([
        [model.position_bound, model.velocity_sample_box[1]] * 2,
        [model.input_box[1]],
        model.disturbance_upper, model.disturbance_upper,
    ])
    s = lo + (hi - lo) * r
    x, y, u, d, d2 = s[:, 0:2], s[:, 2:4], s[:, 4], s[:, 5:7], s[:, 7:9]

    dx = np.linalg.norm(x - y, axis=1)
    ok = dx > 0
    fx = model.f(x, u, d)
    num = np.linalg.norm(fx[ok] - model.f(y[ok], u[ok], d[ok]), axis=1)
    nu = float(np.max(num / dx[ok])) if ok.any() else 0.0

    dd = np.linalg.norm(d - d2, axis=1)
    ok = dd > 0
    num = np.linalg.norm(fx[ok] - model.f(x[ok], u[ok], d2[ok]), axis=1)
    xi = float(np.max(num / dd[ok])) if ok.any() else 0.0
    return nu, xi
