"""Rosenbrock banana function solved by parameter-separated surrogates.

This is the package's end-to-end demo of the driver: the cross term
``-200 x1^2 x2`` is bounded above by completing the square around the
current iterate, which splits the objective into a quartic in x1 and a
quadratic in x2 that are minimized independently.
"""

import numpy as np

from .driver import MmProblem

__all__ = ["rosenbrock_objective", "rosenbrock_mm_step",
           "rosenbrock_surrogate", "RosenbrockProblem"]


def rosenbrock_objective(x):
    """100 (x1^2 - x2)^2 + (x1 - 1)^2."""
    x1, x2 = float(x[0]), float(x[1])
    # spelled as products so overflow yields inf instead of OverflowError
    valley = x1 * x1 - x2
    return 100.0 * valley * valley + (x1 - 1.0) * (x1 - 1.0)


def _quartic(u, gamma):
    # g1(u) = 200 u^4 - gamma u^2 - 2u + 1, the separated x1 surrogate
    return 200.0 * u ** 4 - gamma * u * u - 2.0 * u + 1.0


def _quartic_slope(u, gamma):
    return 800.0 * u ** 3 - 2.0 * gamma * u - 2.0


def _bisect_root(f, lo, hi):
    """Root of f on a sign-changing bracket, bisected to the last ulp."""
    flo = f(lo)
    if flo == 0.0:
        return lo
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


def _quartic_minimizer(gamma):
    """Global minimizer of g1; deterministic tie-break toward smaller u.

    The stationary points are roots of the cubic g1'.  Roots are isolated by
    the cubic's critical points and found by bracketed bisection on
    [-B, B], B = 1 + max of the normalized coefficient magnitudes (every
    root of the cubic lies inside that bound).
    """
    slope = lambda u: _quartic_slope(u, gamma)
    bound = 1.0 + max(1.0, abs(2.0 * gamma) / 800.0, 2.0 / 800.0)
    if gamma <= 0.0:
        # slope' = 2400 u^2 - 2 gamma > 0: strictly increasing, single root
        brackets = [(-bound, bound)]
    else:
        crit = np.sqrt(gamma / 1200.0)
        brackets = [(-bound, -crit), (-crit, crit), (crit, bound)]
    roots = []
    for lo, hi in brackets:
        if slope(lo) == 0.0:
            roots.append(lo)
        elif (slope(lo) < 0.0) != (slope(hi) < 0.0):
            roots.append(_bisect_root(slope, lo, hi))
    best = min(roots, key=lambda u: (_quartic(u, gamma), u))
    return best


def rosenbrock_mm_step(x):
    """One surrogate-minimization step from x.

    x2 has the closed form (x1^2 + x2)/2; x1 is the global minimizer of the
    separated quartic, picked among the real roots of its derivative
    (smaller value wins, ties broken toward smaller x1).
    """
    x1, x2 = float(x[0]), float(x[1])
    shift = x1 * x1 + x2
    gamma = 200.0 * shift - 1.0
    return np.array([_quartic_minimizer(gamma), 0.5 * shift])


def rosenbrock_surrogate(x, x_n):
    """Separated surrogate g1(x1 | x_n) + g2(x2 | x_n).

    Tangent to the objective at x_n and dominating it everywhere; the
    constant term of g2 is 100 (x_n1^2 + x_n2)^2, which is what completing
    the square actually produces.
    """
    x1, x2 = float(x[0]), float(x[1])
    shift = float(x_n[0]) ** 2 + float(x_n[1])
    g1 = _quartic(x1, 200.0 * shift - 1.0)
    g2 = 200.0 * x2 * x2 - 200.0 * shift * x2 + 100.0 * shift * shift
    return g1 + g2


class RosenbrockProblem(MmProblem):
    direction = "minimize"

    def objective(self, state):
        return rosenbrock_objective(state)

    def step(self, state):
        return rosenbrock_mm_step(state)

    def surrogate(self, state, anchor):
        return rosenbrock_surrogate(state, anchor)
