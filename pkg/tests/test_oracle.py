import json
from pathlib import Path

import pytest

from stmpc.oracle import (OracleInstance, OversizeInstanceError, benchmark_instance, dp_oracle,
                          enumerate_one_step, solver_benchmark)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "dp_oracle.json").read_text())


def test_identity_dynamics_at_zero():
    inst = OracleInstance(dynamics=lambda x, u, w: x + 0 * u + 0 * w, stage=lambda x, u: x * x,
                          terminal=lambda x: x * x, N=1, x0=0.0, state_range=(-1, 1),
                          input_range=(-1, 1), disturbance_range=(0, 0))
    assert dp_oracle(inst) == 0.0


def test_golden_value():
    assert dp_oracle(benchmark_instance(2, 1.0)) == pytest.approx(GOLDEN["value"], abs=1e-12)


@pytest.mark.parametrize("x0", [1.0, -0.4, 2.5])
def test_one_step_matches_enumeration(x0):
    inst = benchmark_instance(1, x0)
    assert abs(dp_oracle(inst) - enumerate_one_step(inst)) <= 1e-12


def test_size_caps():
    with pytest.raises(OversizeInstanceError):
        dp_oracle(benchmark_instance(4))
    base = benchmark_instance(2)
    big = OracleInstance(**{**base.__dict__, "state_points": 1001})
    with pytest.raises(OversizeInstanceError):
        dp_oracle(big)


def test_value_increases_with_horizon():
    # nonnegative stage costs: a longer horizon cannot lower the value
    values = [dp_oracle(benchmark_instance(n)) for n in (1, 2, 3)]
    assert values[0] <= values[1] <= values[2]


def test_solver_close_to_oracle():
    solver_value, oracle_value = solver_benchmark()
    assert abs(solver_value - oracle_value) <= 0.05 * oracle_value
