"""Penalized emission-tomography reconstruction.

A square pixel grid is interrogated by detectors placed uniformly on the
circle circumscribing it; every unordered detector pair defines a line of
flight.  Chord lengths of each line through each pixel give the detection
coefficients, columns are scaled to unit l1 norm, and counts are Poisson.
Reconstruction maximizes the count loglikelihood minus an optional quadratic
roughness penalty over adjacent pixel pairs.  With no penalty the update is
the classical EM step; with a penalty each pixel solves a scalar quadratic
and takes its positive root.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .driver import MmProblem, run_mm
from .errors import DomainError, InputError, NumericsError, ShapeError
from .kernels import SERIAL, elementwise, matvec, run_partitioned, tree_reduce_sum

__all__ = [
    "PetGeometry", "PetProblem",
    "build_system_matrix", "build_neighborhoods", "simulate_counts",
    "default_phantom",
    "pet_loglik", "pet_penalized_objective", "pet_penalized_gradient",
    "pet_update", "pet_run", "pet_surrogate",
]

# Intensities are floored here after every update.  The exact surrogate
# maximizer can underflow to zero for pixels whose rays carry no counts,
# and a hard zero would poison the next iteration's Jensen weights; the
# floor keeps long runs inside the positive domain at no visible cost to
# the objective.
INTENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class PetGeometry:
    """Scanner layout: grid_side^2 pixels, detectors on the circumscribing
    circle, one ray per unordered detector pair."""

    grid_side: int
    n_detectors: int

    def __post_init__(self):
        if self.grid_side < 1:
            raise InputError(f"grid_side must be >= 1, got {self.grid_side}")
        if self.n_detectors < 2:
            raise InputError(f"need at least 2 detectors, got {self.n_detectors}")

    @property
    def n_pixels(self):
        return self.grid_side * self.grid_side

    @property
    def n_rays(self):
        return self.n_detectors * (self.n_detectors - 1) // 2

    def detector_positions(self):
        """Detector coordinates, offset half a spacing so none sits exactly
        on a grid corner."""
        radius = math.sqrt(2.0)
        angles = 2.0 * np.pi * (np.arange(self.n_detectors) + 0.5) / self.n_detectors
        return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def _ray_chords(p0, p1, grid_side, lines, row):
    """Accumulate chord lengths of the segment p0->p1 into one system row.

    Crossing parameters with every vertical and horizontal grid line are
    merged; each parameter interval lies inside a single pixel, identified
    by its midpoint.  Pixels are indexed row-major with row 0 at the top.
    """
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    length = math.hypot(dx, dy)
    t_lo, t_hi = 0.0, 1.0
    for start, delta in ((p0[0], dx), (p0[1], dy)):
        if delta == 0.0:
            if not (-1.0 <= start <= 1.0):
                return
        else:
            a = (-1.0 - start) / delta
            b = (1.0 - start) / delta
            if a > b:
                a, b = b, a
            t_lo = max(t_lo, a)
            t_hi = min(t_hi, b)
    if t_lo >= t_hi:
        return
    cuts = [t_lo, t_hi]
    for start, delta in ((p0[0], dx), (p0[1], dy)):
        if delta != 0.0:
            t = (lines - start) / delta
            cuts.extend(t[(t > t_lo) & (t < t_hi)])
    cuts = np.unique(np.asarray(cuts))
    h = 2.0 / grid_side
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        x = p0[0] + mid * dx
        y = p0[1] + mid * dy
        ix = min(int((x + 1.0) / h), grid_side - 1)
        iy = min(int((1.0 - y) / h), grid_side - 1)
        row[iy * grid_side + ix] += (b - a) * length


def build_system_matrix(geometry):
    """Detection coefficients e[i, j]: chord length of ray i inside pixel j,
    then each column scaled to unit l1 norm.

    Rays missing the grid give zero rows, which is allowed; a pixel crossed
    by no ray makes its intensity unidentifiable and is an error.
    """
    det = geometry.detector_positions()
    side = geometry.grid_side
    lines = np.linspace(-1.0, 1.0, side + 1)
    e = np.zeros((geometry.n_rays, geometry.n_pixels))
    ray = 0
    for a in range(geometry.n_detectors):
        for b in range(a + 1, geometry.n_detectors):
            _ray_chords(det[a], det[b], side, lines, e[ray])
            ray += 1
    col_sums = e.sum(axis=0)
    uncovered = np.nonzero(col_sums == 0.0)[0]
    if uncovered.size:
        raise DomainError(
            f"pixel {uncovered[0]} is intersected by no ray; its intensity "
            "is unidentifiable (add detectors or shrink the grid)")
    return e / col_sums


def build_neighborhoods(grid_side):
    """4-neighborhood adjacency lists of the square pixel lattice."""
    if grid_side < 1:
        raise InputError(f"grid_side must be >= 1, got {grid_side}")
    nbrs = []
    for iy in range(grid_side):
        for ix in range(grid_side):
            around = []
            if iy > 0:
                around.append((iy - 1) * grid_side + ix)
            if iy < grid_side - 1:
                around.append((iy + 1) * grid_side + ix)
            if ix > 0:
                around.append(iy * grid_side + ix - 1)
            if ix < grid_side - 1:
                around.append(iy * grid_side + ix + 1)
            nbrs.append(sorted(around))
    return nbrs


def simulate_counts(lambda_true, e, seed):
    """Poisson coincidence counts with means E @ lambda_true (seeded).

    The means go through the deterministic kernels, so a given seed yields
    the same dataset on any machine.
    """
    lam = np.asarray(lambda_true, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if lam.ndim != 1 or e.ndim != 2 or e.shape[1] != lam.shape[0]:
        raise ShapeError(
            f"system matrix {e.shape} does not match intensities {lam.shape}")
    if np.min(lam) < 0.0:
        raise DomainError("true intensities must be nonnegative")
    means = matvec(e, lam)
    rng = np.random.default_rng(seed)
    return rng.poisson(means).astype(np.float64)


def default_phantom(grid_side):
    """Piecewise-constant test image with intensities {0, 1, 4}.

    Warm background (1) fills the square, a hot disk (4) sits off-center,
    and a cold disk (0) punches a hole near the opposite corner.  The warm
    background guarantees that with realistic seeds every pixel's rays see
    some counts, keeping all intensities identifiable.
    """
    side = grid_side
    h = 2.0 / side
    lam = np.ones(side * side)
    for iy in range(side):
        for ix in range(side):
            x = -1.0 + (ix + 0.5) * h
            y = 1.0 - (iy + 0.5) * h
            if (x + 0.25) ** 2 + (y + 0.2) ** 2 < 0.55 ** 2:
                lam[iy * side + ix] = 4.0
            if (x - 0.35) ** 2 + (y - 0.35) ** 2 < 0.22 ** 2:
                lam[iy * side + ix] = 0.0
    return lam


def _neighbor_csr(neighborhoods):
    indptr = np.zeros(len(neighborhoods) + 1, dtype=np.int64)
    for j, around in enumerate(neighborhoods):
        indptr[j + 1] = indptr[j] + len(around)
    indices = np.fromiter((k for around in neighborhoods for k in around),
                          dtype=np.int64, count=indptr[-1])
    return indptr, indices


@njit(cache=True, nogil=True)
def _neighbor_sums(indptr, indices, lam, out, lo, hi):
    for j in range(lo, hi):
        s = 0.0
        for t in range(indptr[j], indptr[j + 1]):
            s += lam[indices[t]]
        out[j] = s


@dataclass(frozen=True)
class PetProblem:
    """System matrix, observed counts, penalty constant, and the pixel
    adjacency structure.  Columns of E must already have unit l1 norm."""

    e: np.ndarray
    y: np.ndarray
    mu: float
    neighborhoods: list

    e_t: np.ndarray = field(init=False, repr=False)
    col_sums: np.ndarray = field(init=False, repr=False)
    degrees: np.ndarray = field(init=False, repr=False)
    nbr_indptr: np.ndarray = field(init=False, repr=False)
    nbr_indices: np.ndarray = field(init=False, repr=False)
    pair_left: np.ndarray = field(init=False, repr=False)
    pair_right: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        e = np.ascontiguousarray(np.asarray(self.e, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64)
        if e.ndim != 2:
            raise ShapeError(f"system matrix must be 2-D, got {e.shape}")
        if y.ndim != 1 or y.shape[0] != e.shape[0]:
            raise ShapeError(
                f"counts shape {y.shape} does not match {e.shape[0]} rays")
        if np.min(e) < 0.0:
            raise DomainError("detection coefficients must be nonnegative")
        if np.min(y) < 0.0:
            raise DomainError("counts must be nonnegative")
        if self.mu < 0.0:
            raise DomainError(f"penalty constant must be >= 0, got {self.mu}")
        col_sums = e.sum(axis=0)
        if np.max(np.abs(col_sums - 1.0)) > 1e-8:
            raise DomainError(
                "system matrix columns must have unit l1 norm "
                "(normalize as build_system_matrix does)")
        p = e.shape[1]
        if len(self.neighborhoods) != p:
            raise ShapeError(
                f"{len(self.neighborhoods)} neighborhoods for {p} pixels")
        pair_set = set()
        for j, around in enumerate(self.neighborhoods):
            for k in around:
                if k == j:
                    raise DomainError(f"pixel {j} lists itself as a neighbor")
                if j not in self.neighborhoods[k]:
                    raise DomainError(
                        f"neighborhood is not symmetric: {k} in N({j}) but "
                        f"{j} not in N({k})")
                pair_set.add((min(j, k), max(j, k)))
        pairs = sorted(pair_set)
        indptr, indices = _neighbor_csr(self.neighborhoods)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "e_t", np.ascontiguousarray(e.T))
        object.__setattr__(self, "col_sums", col_sums)
        object.__setattr__(self, "degrees",
                           np.array([float(len(a)) for a in self.neighborhoods]))
        object.__setattr__(self, "nbr_indptr", indptr)
        object.__setattr__(self, "nbr_indices", indices)
        object.__setattr__(self, "pair_left",
                           np.array([a for a, _ in pairs], dtype=np.int64))
        object.__setattr__(self, "pair_right",
                           np.array([b for _, b in pairs], dtype=np.int64))

    @property
    def n_pixels(self):
        return self.e.shape[1]

    @property
    def n_rays(self):
        return self.e.shape[0]


def _count_ratio(y, mean_counts, backend):
    """y_i / mean_i where y_i > 0, else 0; positive counts on a zero mean
    signal an unusable state."""
    if np.any((y > 0.0) & (mean_counts == 0.0)):
        raise NumericsError("a ray with positive counts has zero expected "
                            "counts; the loglikelihood is -inf")

    def f(yc, mc):
        out = np.zeros_like(yc)
        m = yc > 0.0
        out[m] = yc[m] / mc[m]
        return out

    return elementwise(f, y, mean_counts, backend=backend)


def _loglik_from_means(y, mean_counts, backend):
    if np.any((y > 0.0) & (mean_counts == 0.0)):
        raise NumericsError("a ray with positive counts has zero expected counts")

    def f(yc, mc):
        out = -mc.copy()
        m = yc > 0.0
        out[m] += yc[m] * np.log(mc[m])
        return out

    terms = elementwise(f, y, mean_counts, backend=backend)
    return tree_reduce_sum(terms, backend=backend)


def pet_loglik(lam, e, y, backend=SERIAL):
    """Poisson count loglikelihood sum_i [y_i ln(E lam)_i - (E lam)_i]."""
    lam = np.asarray(lam, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mean_counts = matvec(e, lam, backend=backend)
    return _loglik_from_means(y, mean_counts, backend)


def _penalty(lam, problem, backend):
    if problem.pair_left.size == 0:
        return 0.0
    diffs = lam[problem.pair_left] - lam[problem.pair_right]
    sq = elementwise(lambda d: d * d, diffs, backend=backend)
    return tree_reduce_sum(sq, backend=backend)


def _objective_from_means(lam, mean_counts, problem, backend):
    value = _loglik_from_means(problem.y, mean_counts, backend)
    if problem.mu > 0.0:
        value -= 0.5 * problem.mu * _penalty(lam, problem, backend)
    return value


def pet_penalized_objective(lam, problem, backend=SERIAL):
    """Loglikelihood minus (mu/2) * sum of squared adjacent differences,
    each unordered pair counted once."""
    lam = np.asarray(lam, dtype=np.float64)
    mean_counts = matvec(problem.e, lam, backend=backend)
    return _objective_from_means(lam, mean_counts, problem, backend)


def pet_penalized_gradient(lam, problem, backend=SERIAL):
    """Analytic gradient of the penalized objective."""
    lam = np.asarray(lam, dtype=np.float64)
    mean_counts = matvec(problem.e, lam, backend=backend)
    ratio = _count_ratio(problem.y, mean_counts, backend)
    grad = matvec(problem.e_t, ratio, backend=backend) - problem.col_sums
    if problem.mu > 0.0:
        nbr = np.empty(problem.n_pixels)
        run_partitioned(_neighbor_sums, problem.n_pixels, backend,
                        problem.nbr_indptr, problem.nbr_indices, lam, nbr)
        grad -= problem.mu * (problem.degrees * lam - nbr)
    return grad


def pet_update(lam, problem, backend=SERIAL, mean_counts=None):
    """One surrogate-maximization step from strictly positive intensities.

    Each count is split across pixels in proportion to its current expected
    contribution (Jensen weights); the per-pixel totals c_j are exactly
    lam_j * {E^t (y / E lam)}_j, accumulated by tree reduction.  With no
    penalty the new intensity is c_j; otherwise each pixel takes the
    positive root of its scalar quadratic.  ``mean_counts`` may carry a
    precomputed E @ lam to avoid recomputing it.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (problem.n_pixels,):
        raise ShapeError(
            f"intensities shape {lam.shape} does not match "
            f"{problem.n_pixels} pixels")
    if np.min(lam) <= 0.0:
        bad = int(np.argmin(lam))
        raise DomainError(
            f"intensities must be strictly positive; pixel {bad} is "
            f"{lam[bad]!r}")

    if mean_counts is None:
        mean_counts = matvec(problem.e, lam, backend=backend)
    ratio = _count_ratio(problem.y, mean_counts, backend)
    backproj = matvec(problem.e_t, ratio, backend=backend)
    totals = elementwise(lambda a, s: a * s, lam, backproj, backend=backend)

    if problem.mu == 0.0:
        return elementwise(lambda c: np.maximum(c, INTENSITY_FLOOR), totals,
                           backend=backend)

    nbr = np.empty(problem.n_pixels)
    run_partitioned(_neighbor_sums, problem.n_pixels, backend,
                    problem.nbr_indptr, problem.nbr_indices, lam, nbr)
    mu = problem.mu

    def root(lam_c, c_c, nbr_c, deg_c):
        a = -2.0 * mu * deg_c
        b = mu * (deg_c * lam_c + nbr_c) - 1.0
        disc = b * b - 4.0 * a * c_c
        if np.any(disc < 0.0):
            raise NumericsError(
                "negative discriminant in the penalized intensity update; "
                "this indicates a bug, not a data problem")
        sq = np.sqrt(disc)
        # positive root of a x^2 + b x + c, in the cancellation-free form
        # for each sign of b; for b < 0 it also degenerates gracefully to
        # the EM value c when a pixel has no neighbors (a = 0, b = -1)
        neg = b < 0.0
        out = np.where(neg,
                       2.0 * c_c / np.where(neg, sq - b, 1.0),
                       (-b - sq) / np.where(a < 0.0, 2.0 * a, -1.0))
        return np.maximum(out, INTENSITY_FLOOR)

    return elementwise(root, lam, totals, nbr, problem.degrees, backend=backend)


def pet_surrogate(lam, lam_n, problem):
    """Direct evaluation of the minorizing surrogate at (lam | lam_n).

    Jensen's inequality on each log of a sum, plus the even-convex bound on
    each squared difference in the penalty.  Intended for property tests on
    small instances.
    """
    lam = np.asarray(lam, dtype=np.float64)
    lam_n = np.asarray(lam_n, dtype=np.float64)
    e, y = problem.e, problem.y
    mean_n = e @ lam_n
    if np.any((y > 0.0) & (mean_n == 0.0)):
        raise NumericsError("anchor point has zero expected counts on a "
                            "ray with positive counts")
    value = -float(e.sum(axis=0) @ lam)
    for i in np.nonzero(y > 0.0)[0]:
        weights = e[i] * lam_n / mean_n[i]
        m = weights > 0.0
        value += y[i] * float(
            weights[m] @ np.log(e[i, m] * lam[m] / weights[m]))
    if problem.mu > 0.0:
        lj, rk = problem.pair_left, problem.pair_right
        anchor = lam_n[lj] + lam_n[rk]
        value -= 0.25 * problem.mu * float(
            np.sum((2.0 * lam[lj] - anchor) ** 2 + (2.0 * lam[rk] - anchor) ** 2))
    return value


class _PetMm(MmProblem):
    direction = "maximize"

    def __init__(self, problem, backend):
        self._problem = problem
        self._backend = backend
        self._mean_cache = None  # (lam array, E @ lam), keyed by identity

    def _means(self, lam):
        cached = self._mean_cache
        if cached is not None and cached[0] is lam:
            return cached[1]
        means = matvec(self._problem.e, lam, backend=self._backend)
        self._mean_cache = (lam, means)
        return means

    def objective(self, state):
        state = np.asarray(state, dtype=np.float64)
        return _objective_from_means(state, self._means(state),
                                     self._problem, self._backend)

    def step(self, state):
        return pet_update(state, self._problem, backend=self._backend,
                          mean_counts=self._means(state))

    def surrogate(self, state, anchor):
        return pet_surrogate(state, anchor, self._problem)


def pet_run(problem, config, backend=SERIAL):
    """Maximize the penalized loglikelihood from the flat start lam = 1."""
    lam0 = np.ones(problem.n_pixels)
    return run_mm(_PetMm(problem, backend), lam0, config)
