"""Generic fixed-point driver for surrogate-based ascent/descent solvers.

Every solver in this package exposes the same capability: an objective, a
step map that is guaranteed (by construction, and checked at run time) to
move the objective in one direction, and optionally a surrogate function for
property tests.  ``run_mm`` iterates the step map under a relative-change
stopping rule and records the full objective trace.
"""

import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import InputError, MonotonicityError, NonFiniteError

__all__ = ["MmConfig", "MmTrace", "MmProblem", "relative_change", "run_mm"]


@dataclass(frozen=True)
class MmConfig:
    """Stopping rule and reproducibility parameters.

    epsilon:        relative-change threshold that declares convergence.
    max_iters:      iteration cap.
    seed:           RNG seed for solver initialization.
    check_monotone: verify the defining improvement property every step.
    monotone_tol:   relative slack allowed before a violation is an error.
    """

    epsilon: float = 1e-9
    max_iters: int = 100_000
    seed: int = 0
    check_monotone: bool = True
    monotone_tol: float = 1e-12

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise InputError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.monotone_tol < 0:
            raise InputError(f"monotone_tol must be >= 0, got {self.monotone_tol}")


@dataclass
class MmTrace:
    """Per-iteration record of one run.

    ``objective_values`` has length ``iters + 1`` (the initial point is
    included); ``cumulative_seconds`` is aligned with it.
    """

    objective_values: np.ndarray
    cumulative_seconds: np.ndarray
    iters: int
    converged: bool
    wall_time: float
    final_relative_change: float


class MmProblem(ABC):
    """A solver expressed as objective + improvement step.

    ``direction`` is "minimize" or "maximize".  ``step`` must improve the
    objective in that direction; the driver enforces this when configured
    to.  Solvers that can evaluate their surrogate directly override
    ``surrogate(state, anchor)`` for the property-test suite.
    """

    direction = "minimize"

    @abstractmethod
    def objective(self, state):
        ...

    @abstractmethod
    def step(self, state):
        ...

    def surrogate(self, state, anchor):
        raise NotImplementedError(f"{type(self).__name__} exposes no surrogate")


def relative_change(f_n, f_prev):
    """|f_n - f_prev| / (|f_prev| + 1), the stopping-rule statistic."""
    if not (math.isfinite(f_n) and math.isfinite(f_prev)):
        raise NonFiniteError(
            f"non-finite objective value in relative change: {f_n!r}, {f_prev!r}"
        )
    return abs(f_n - f_prev) / (abs(f_prev) + 1.0)


def _check_direction(direction):
    if direction not in ("minimize", "maximize"):
        raise InputError(f"unknown direction {direction!r}")


def run_mm(problem, state0, config=MmConfig()):
    """Iterate ``state <- problem.step(state)`` until the relative change of
    the objective falls below ``config.epsilon`` or ``config.max_iters`` is
    reached, whichever comes first.

    Returns ``(final_state, MmTrace)``.  The trace records every objective
    value including the initial one.  A monotonicity violation beyond
    ``config.monotone_tol`` (relative) raises ``MonotonicityError`` naming
    the iteration: it signals an implementation bug, not a data problem.
    """
    _check_direction(problem.direction)
    sign = 1.0 if problem.direction == "maximize" else -1.0
    started = time.perf_counter()

    f_prev = float(problem.objective(state0))
    if not math.isfinite(f_prev):
        raise NonFiniteError(f"objective is non-finite at the initial point: {f_prev!r}")
    values = [f_prev]
    seconds = [0.0]

    state = state0
    converged = False
    rel = math.inf
    for it in range(1, config.max_iters + 1):
        state = problem.step(state)
        f_new = float(problem.objective(state))
        if not math.isfinite(f_new):
            raise NonFiniteError(f"objective became non-finite at iteration {it}: {f_new!r}")
        if config.check_monotone:
            slack = config.monotone_tol * (1.0 + abs(f_prev))
            if sign * (f_new - f_prev) < -slack:
                raise MonotonicityError(it, f_prev, f_new, problem.direction)
        rel = relative_change(f_new, f_prev)
        values.append(f_new)
        seconds.append(time.perf_counter() - started)
        f_prev = f_new
        if rel < config.epsilon:
            converged = True
            break

    trace = MmTrace(
        objective_values=np.array(values),
        cumulative_seconds=np.array(seconds),
        iters=len(values) - 1,
        converged=converged,
        wall_time=time.perf_counter() - started,
        final_relative_change=rel,
    )
    return state, trace
