"""Driver contract: stopping rule, monotonicity enforcement, tracing,
restartability, and the Rosenbrock demo problem."""

import numpy as np
import pytest

from mmkit.driver import MmConfig, MmProblem, relative_change, run_mm
from mmkit.errors import (InputError, MonotonicityError, NonFiniteError)
from mmkit.rosenbrock import (RosenbrockProblem, rosenbrock_mm_step,
                              rosenbrock_objective, rosenbrock_surrogate)


class TestRelativeChange:
    def test_identical_values(self):
        assert relative_change(5.0, 5.0) == 0.0
        assert relative_change(-7337.152765, -7337.152765) == 0.0

    def test_unit_denominator_offset(self):
        assert relative_change(1.0, 0.0) == 1.0

    def test_general_value(self):
        assert relative_change(3.0, -1.0) == 4.0 / 2.0

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            relative_change(np.inf, 1.0)
        with pytest.raises(NonFiniteError):
            relative_change(1.0, np.nan)


class TestConfig:
    def test_defaults_match_protocol(self):
        cfg = MmConfig()
        assert cfg.epsilon == 1e-9
        assert cfg.max_iters == 100_000
        assert cfg.check_monotone and cfg.monotone_tol == 1e-12

    def test_validation(self):
        with pytest.raises(InputError):
            MmConfig(epsilon=0.0)
        with pytest.raises(InputError):
            MmConfig(max_iters=0)
        with pytest.raises(InputError):
            MmConfig(monotone_tol=-1e-9)


class _Identity(MmProblem):
    direction = "minimize"

    def objective(self, state):
        return float(state)

    def step(self, state):
        return state


class _Diverging(MmProblem):
    """Deliberately broken: the objective increases under minimization."""

    direction = "minimize"

    def __init__(self, blow_up_at):
        self.blow_up_at = blow_up_at
        self.calls = 0

    def objective(self, state):
        return float(state)

    def step(self, state):
        self.calls += 1
        return state + (1.0 if self.calls >= self.blow_up_at else -1.0)


class TestRunMm:
    def test_identity_converges_in_one_step(self):
        state, trace = run_mm(_Identity(), 3.5, MmConfig())
        assert state == 3.5
        assert trace.converged
        assert trace.iters == 1
        assert trace.final_relative_change == 0.0
        assert np.array_equal(trace.objective_values, [3.5, 3.5])

    def test_trace_lengths(self):
        _, trace = run_mm(RosenbrockProblem(), np.array([-1.0, -1.0]),
                          MmConfig(max_iters=17, epsilon=1e-300))
        assert trace.iters == 17
        assert not trace.converged
        assert len(trace.objective_values) == trace.iters + 1
        assert len(trace.cumulative_seconds) == trace.iters + 1
        assert trace.cumulative_seconds[0] == 0.0
        assert np.all(np.diff(trace.cumulative_seconds) >= 0.0)

    def test_monotonicity_violation_names_iteration(self):
        with pytest.raises(MonotonicityError) as info:
            run_mm(_Diverging(blow_up_at=4), 10.0, MmConfig(max_iters=50))
        assert info.value.iteration == 4

    def test_non_finite_objective_rejected(self):
        with pytest.raises(NonFiniteError):
            run_mm(RosenbrockProblem(), np.array([1e200, 0.0]), MmConfig())

    def test_restartability_bitwise(self):
        problem = RosenbrockProblem()
        x0 = np.array([-1.0, -1.0])
        joined_state, joined = run_mm(problem, x0,
                                      MmConfig(max_iters=25, epsilon=1e-300))
        mid_state, first = run_mm(problem, x0,
                                  MmConfig(max_iters=11, epsilon=1e-300))
        final_state, second = run_mm(problem, mid_state,
                                     MmConfig(max_iters=14, epsilon=1e-300))
        assert np.array_equal(final_state, joined_state)
        assert np.array_equal(
            np.concatenate([first.objective_values,
                            second.objective_values[1:]]),
            joined.objective_values)


def _bisect(f, lo, hi):
    flo = f(lo)
    while True:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            return mid
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (flo < 0.0) == (fmid < 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid


class TestRosenbrock:
    def test_objective_values(self):
        assert rosenbrock_objective([1.0, 1.0]) == 0.0
        assert rosenbrock_objective([-1.0, -1.0]) == 404.0
        assert rosenbrock_objective([0.0, 0.0]) == 1.0

    def test_fixed_point(self):
        step = rosenbrock_mm_step(np.array([1.0, 1.0]))
        assert abs(step[0] - 1.0) <= 5e-15
        assert step[1] == 1.0

    def test_step_matches_bisection_oracle(self):
        # both starts lead to the same cubic 800 u^3 + 2u - 2 = 0
        root = _bisect(lambda u: 800.0 * u ** 3 + 2.0 * u - 2.0, 0.0, 1.0)
        for x in ([-1.0, -1.0], [0.0, 0.0]):
            step = rosenbrock_mm_step(np.array(x))
            assert abs(step[0] - root) <= 1e-13
            assert step[1] == 0.0

    def test_hundred_iterations_strictly_decreasing(self):
        x = np.array([-1.0, -1.0])
        values = [rosenbrock_objective(x)]
        for _ in range(100):
            x = rosenbrock_mm_step(x)
            values.append(rosenbrock_objective(x))
        values = np.array(values)
        assert np.all(np.diff(values) < 0.0)
        _, trace = run_mm(RosenbrockProblem(), np.array([-1.0, -1.0]),
                          MmConfig(max_iters=100, epsilon=1e-300))
        assert not trace.converged
        assert np.array_equal(trace.objective_values, values)

    def test_surrogate_tangent_and_dominating(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            anchor = rng.uniform(-2.0, 2.0, size=2)
            f_anchor = rosenbrock_objective(anchor)
            g_anchor = rosenbrock_surrogate(anchor, anchor)
            assert abs(g_anchor - f_anchor) <= 1e-10 * (1.0 + abs(f_anchor))
            point = rng.uniform(-2.0, 2.0, size=2)
            f_point = rosenbrock_objective(point)
            assert rosenbrock_surrogate(point, anchor) >= \
                f_point - 1e-10 * (1.0 + abs(f_point))

    def test_quartic_tie_break_prefers_smaller_root(self):
        # gamma large and the linear term tiny makes the quartic nearly
        # even: the minimizer must still be chosen deterministically.
        x = rosenbrock_mm_step(np.array([0.0, 10.0]))
        # quartic 200u^4 - 1999u^2 - 2u + 1: global minimum is the positive
        # root (the -2u term favors it)
        assert x[0] > 0.0
