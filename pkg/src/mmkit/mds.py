"""Multidimensional scaling by stress majorization.

Objects live as columns of a p x q configuration matrix.  The weighted
stress is majorized by a Cauchy-Schwarz bound on the cross term and a
convexity bound on the squared distances, which separates the update over
objects: every point moves independently given the previous configuration.
"""

from dataclasses import dataclass, field

import numpy as np

from .driver import MmProblem, run_mm
from .errors import DomainError, InputError, NumericsError, ShapeError
from .kernels import SERIAL, elementwise, matmul, matvec, tree_reduce_sum

__all__ = [
    "MdsProblem", "stress", "stress_gradient", "mds_update", "mds_run",
    "mds_surrogate", "anchor_configuration", "votes_to_dissimilarity",
]


@dataclass(frozen=True)
class MdsProblem:
    """Symmetric weights and dissimilarities over q objects, plus the
    embedding dimension p."""

    weights: np.ndarray
    dissimilarities: np.ndarray
    p: int

    weighted_diss: np.ndarray = field(init=False, repr=False)
    weight_sums: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.dissimilarities, dtype=np.float64))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"weights must be square, got {w.shape}")
        if y.shape != w.shape:
            raise ShapeError(
                f"dissimilarities {y.shape} do not match weights {w.shape}")
        for name, m in (("weights", w), ("dissimilarities", y)):
            if not np.all(np.isfinite(m)):
                raise DomainError(f"{name} contain non-finite entries")
            if np.min(m) < 0.0:
                raise DomainError(f"{name} must be nonnegative")
            if not np.array_equal(m, m.T):
                raise DomainError(f"{name} must be exactly symmetric")
            if np.any(np.diag(m) != 0.0):
                raise DomainError(f"{name} must have a zero diagonal")
        if self.p < 1:
            raise InputError(f"embedding dimension must be >= 1, got {self.p}")
        row_sums = w.sum(axis=1)
        isolated = np.nonzero(row_sums == 0.0)[0]
        if isolated.size:
            raise DomainError(
                f"object {isolated[0]} has zero total weight; its position "
                "is undefined")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dissimilarities", y)
        object.__setattr__(self, "weighted_diss", w * y)
        object.__setattr__(self, "weight_sums", row_sums)

    @property
    def q(self):
        return self.weights.shape[0]


def _check_theta(theta, problem):
    theta = np.ascontiguousarray(np.asarray(theta, dtype=np.float64))
    if theta.ndim != 2 or theta.shape != (problem.p, problem.q):
        raise ShapeError(
            f"configuration must be {problem.p}x{problem.q}, got "
            f"{np.asarray(theta).shape}")
    return theta


def _pair_distances(theta, backend):
    """(gram, d2): Gram matrix and squared pairwise distances, clamped at 0."""
    gram = matmul(theta, theta, transpose_a=True, backend=backend)
    diag = np.diag(gram).copy()
    q = gram.shape[0]
    d2 = elementwise(
        lambda gi, gj, g: np.maximum(gi + gj - 2.0 * g, 0.0),
        np.broadcast_to(diag[:, None], (q, q)),
        np.broadcast_to(diag[None, :], (q, q)),
        gram, backend=backend)
    return gram, d2


def stress(theta, problem, backend=SERIAL):
    """Weighted squared mismatch between dissimilarities and embedded
    distances, each unordered pair counted once."""
    theta = _check_theta(theta, problem)
    _, d2 = _pair_distances(theta, backend)
    iu, ju = np.triu_indices(problem.q, k=1)
    dist = np.sqrt(d2[iu, ju])
    resid = problem.dissimilarities[iu, ju] - dist
    terms = elementwise(lambda w, r: w * r * r,
                        problem.weights[iu, ju], resid, backend=backend)
    return tree_reduce_sum(terms, backend=backend)


def _coincidence_error(d2, coupling):
    bad = np.nonzero((d2 <= 0.0) & (coupling > 0.0))
    if bad[0].size:
        i, j = int(bad[0][0]), int(bad[1][0])
        raise NumericsError(
            f"objects {i} and {j} coincide but are coupled with positive "
            "weight * dissimilarity; the surrogate is undefined there")


def mds_update(theta, problem, backend=SERIAL):
    """One parallel stress-majorization step.

    Computed in matrix form: with Z holding weighted dissimilarities over
    current distances (zero diagonal), each column i of the new
    configuration is
        [theta_i * (w_i. + z_i.) + {Theta (W - Z)}_:,i] / (2 w_i.),
    which reproduces the per-object weighted-average update exactly.
    """
    theta = _check_theta(theta, problem)
    _, d2 = _pair_distances(theta, backend)
    q = problem.q
    off_diag = ~np.eye(q, dtype=bool)
    coupling = problem.weighted_diss * off_diag
    _coincidence_error(d2, coupling)

    def z_term(x, dd):
        out = np.zeros_like(x)
        m = x > 0.0
        out[m] = x[m] / np.sqrt(dd[m])
        return out

    z = elementwise(z_term, coupling, d2, backend=backend)
    z_sums = matvec(z, np.ones(q), backend=backend)
    spread = matmul(theta, elementwise(lambda a, b: a - b, problem.weights, z,
                                       backend=backend), backend=backend)
    p = problem.p
    scale_new = np.broadcast_to(problem.weight_sums + z_sums, (p, q))
    halved = np.broadcast_to(2.0 * problem.weight_sums, (p, q))
    return elementwise(lambda t, s, sp, h: (t * s + sp) / h,
                       theta, scale_new, spread, halved, backend=backend)


def stress_gradient(theta, problem, backend=SERIAL):
    """Analytic stress gradient; requires positive distances wherever the
    weight is positive."""
    theta = _check_theta(theta, problem)
    _, d2 = _pair_distances(theta, backend)
    q = problem.q
    off_diag = ~np.eye(q, dtype=bool)
    w_off = problem.weights * off_diag
    _coincidence_error(d2, w_off)

    def coef_term(w, y, dd):
        out = np.zeros_like(w)
        m = w > 0.0
        out[m] = w[m] * (1.0 - y[m] / np.sqrt(dd[m]))
        return out

    coef = elementwise(coef_term, w_off, problem.dissimilarities, d2,
                       backend=backend)
    row = matvec(coef, np.ones(q), backend=backend)
    pulled = matmul(theta, coef, backend=backend)
    return 2.0 * (theta * row[None, :] - pulled)


def mds_surrogate(theta, theta_n, problem):
    """Direct evaluation of the stress majorizer at (theta | theta_n).

    The Cauchy-Schwarz bound replaces each cross term and the convexity
    bound replaces each squared distance; all constant terms are kept so
    the surrogate is tangent at theta_n, not merely tangent up to a shift.
    Intended for property tests on small instances.
    """
    theta = _check_theta(theta, problem)
    theta_n = _check_theta(theta_n, problem)
    w, y = problem.weights, problem.dissimilarities
    value = 0.0
    for i in range(problem.q):
        for j in range(i + 1, problem.q):
            if w[i, j] == 0.0 and y[i, j] == 0.0:
                continue
            gap_n = theta_n[:, i] - theta_n[:, j]
            dist_n = float(np.sqrt(gap_n @ gap_n))
            value += w[i, j] * y[i, j] ** 2
            if w[i, j] * y[i, j] > 0.0:
                if dist_n == 0.0:
                    raise NumericsError(
                        f"objects {i} and {j} coincide at the anchor point")
                gap = theta[:, i] - theta[:, j]
                value -= 2.0 * w[i, j] * y[i, j] * float(gap @ gap_n) / dist_n
            center = 0.5 * (theta_n[:, i] + theta_n[:, j])
            di = theta[:, i] - center
            dj = theta[:, j] - center
            value += 2.0 * w[i, j] * (float(di @ di) + float(dj @ dj))
    return value


def anchor_configuration(theta):
    """Rigidly move a configuration so object 1 sits at the origin and the
    first p-1 coordinates of object 2 vanish.  Stress is unchanged."""
    theta = np.ascontiguousarray(np.asarray(theta, dtype=np.float64))
    if theta.ndim != 2:
        raise ShapeError(f"configuration must be 2-D, got {theta.shape}")
    p, q = theta.shape
    shifted = theta - theta[:, [0]]
    if p < 2 or q < 2:
        return shifted
    u = shifted[:, 1]
    norm = float(np.sqrt(u @ u))
    if norm == 0.0:
        return shifted
    target = np.zeros(p)
    # reflect u onto the last axis, choosing the sign that avoids cancellation
    target[-1] = -norm if u[-1] >= 0.0 else norm
    v = u - target
    vsq = float(v @ v)
    if vsq == 0.0:
        return shifted
    reflector = np.eye(p) - (2.0 / vsq) * np.outer(v, v)
    reflector[0, :] = -reflector[0, :]  # restore det +1: rotation, not reflection
    return matmul(reflector, shifted)


class _MdsMm(MmProblem):
    direction = "minimize"

    def __init__(self, problem, backend):
        self._problem = problem
        self._backend = backend

    def objective(self, state):
        return stress(state, self._problem, backend=self._backend)

    def step(self, state):
        return mds_update(state, self._problem, backend=self._backend)

    def surrogate(self, state, anchor):
        return mds_surrogate(state, anchor, self._problem)


def mds_run(problem, config, backend=SERIAL, anchor=False):
    """Minimize stress from a uniform[-1, 1] start.

    With ``anchor`` set, the converged configuration is rigidly transformed
    to the anchoring convention after the fact, leaving the trace and the
    stress untouched.
    """
    rng = np.random.default_rng(config.seed)
    theta0 = rng.uniform(-1.0, 1.0, size=(problem.p, problem.q))
    theta, trace = run_mm(_MdsMm(problem, backend), theta0, config)
    if anchor:
        theta = anchor_configuration(theta)
    return theta, trace


def votes_to_dissimilarity(votes):
    """Pairwise disagreement fractions from a q x m roll-call matrix.

    Entries are 1 (yea), -1 (nay), 0 (absent).  For each pair of voters the
    dissimilarity is the fraction of roll calls both attended on which they
    disagreed.  A pair sharing no roll call is an error.
    """
    votes = np.asarray(votes, dtype=np.float64)
    if votes.ndim != 2:
        raise ShapeError(f"vote matrix must be 2-D, got {votes.shape}")
    if not np.all(np.isin(votes, (-1.0, 0.0, 1.0))):
        raise DomainError("votes must be 1 (yea), -1 (nay) or 0 (absent)")
    present = (votes != 0.0).astype(np.float64)
    shared = present @ present.T
    off = ~np.eye(votes.shape[0], dtype=bool)
    if np.any(shared[off] == 0.0):
        i, j = [int(v[0]) for v in np.nonzero((shared == 0.0) & off)]
        raise DomainError(
            f"voters {i} and {j} share no roll call; their dissimilarity "
            "is undefined")
    agreement = votes @ votes.T  # agreements minus disagreements on shared calls
    diss = (shared - agreement) / (2.0 * np.where(off, shared, 1.0))
    np.fill_diagonal(diss, 0.0)
    return diss
