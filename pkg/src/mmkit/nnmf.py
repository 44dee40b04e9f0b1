"""Nonnegative matrix factorization by multiplicative updates.

Two losses are supported: squared Frobenius error (minimized) and the
Poisson-model log fit (maximized, with square-root damped updates).  Both
update families scale factor entries by ratios of nonnegative quantities,
so factors stay nonnegative with zeros absorbing.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .driver import MmProblem, run_mm
from .errors import DomainError, NumericsError, ShapeError
from .kernels import SERIAL, elementwise, matmul, matvec, tree_reduce_sum

__all__ = [
    "NnmfProblem", "FactorPair",
    "nnmf_objective", "nnmf_update_v", "nnmf_update_w", "nnmf_run",
    "nnmf_gradient", "nnmf_surrogate",
    "nnmf_poisson_objective", "nnmf_poisson_update", "nnmf_poisson_run",
    "cbcl_preprocess",
]

log = logging.getLogger(__name__)

# Added to multiplicative-update denominators: exact zeros are measure-zero
# under uniform initialization, but intermediate underflow must not abort a
# long run.  Entries that are exactly zero stay zero (absorbing).
DENOM_GUARD = 1e-300


def _require_nonneg(name, m):
    if np.min(m) < 0.0:
        raise DomainError(f"{name} must be entrywise nonnegative")


@dataclass(frozen=True)
class NnmfProblem:
    """Data matrix with nonnegative entries and the target rank."""

    x: np.ndarray
    rank: int

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        if x.ndim != 2:
            raise ShapeError(f"data matrix must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("data matrix contains non-finite entries")
        _require_nonneg("data matrix", x)
        if self.rank < 1:
            raise DomainError(f"rank must be >= 1, got {self.rank}")
        if self.rank > min(x.shape):
            warnings.warn(
                f"rank {self.rank} exceeds min(data shape) = {min(x.shape)}; "
                "the factorization is overcomplete", stacklevel=2)
        object.__setattr__(self, "x", x)

    @property
    def shape(self):
        return self.x.shape


@dataclass(frozen=True)
class FactorPair:
    """Left (p x r) and right (r x q) nonnegative factors."""

    v: np.ndarray
    w: np.ndarray


def nnmf_objective(x, v, w, backend=SERIAL):
    """Squared Frobenius error of the reconstruction: ||X - VW||_F^2."""
    recon = matmul(v, w, backend=backend)
    if recon.shape != np.shape(x):
        raise ShapeError(f"data is {np.shape(x)} but VW is {recon.shape}")
    sq = elementwise(lambda a, b: (a - b) * (a - b), x, recon, backend=backend)
    return tree_reduce_sum(sq, backend=backend)


def nnmf_update_v(x, v, w, backend=SERIAL):
    """Multiplicative update of the left factor holding W fixed.

    v <- v * {X W^t} / {(V W) W^t}.  The denominator is grouped exactly like
    the numerator so that X = VW is a bitwise fixed point.
    """
    for name, m in (("x", x), ("v", v), ("w", w)):
        _require_nonneg(name, m)
    numer = matmul(x, w, transpose_b=True, backend=backend)
    recon = matmul(v, w, backend=backend)
    denom = matmul(recon, w, transpose_b=True, backend=backend)
    return elementwise(lambda f, n, d: f * (n / (d + DENOM_GUARD)),
                       v, numer, denom, backend=backend)


def nnmf_update_w(x, v, w, backend=SERIAL):
    """Multiplicative update of the right factor holding V fixed.

    w <- w * {V^t X} / {V^t (V W)}, mirroring ``nnmf_update_v``.
    """
    for name, m in (("x", x), ("v", v), ("w", w)):
        _require_nonneg(name, m)
    numer = matmul(v, x, transpose_a=True, backend=backend)
    recon = matmul(v, w, backend=backend)
    denom = matmul(v, recon, transpose_a=True, backend=backend)
    return elementwise(lambda f, n, d: f * (n / (d + DENOM_GUARD)),
                       w, numer, denom, backend=backend)


def nnmf_gradient(x, v, w, backend=SERIAL):
    """Gradient of the Frobenius objective with respect to (V, W)."""
    recon = matmul(v, w, backend=backend)
    resid = elementwise(lambda r, a: r - a, recon, x, backend=backend)
    grad_v = 2.0 * matmul(resid, w, transpose_b=True, backend=backend)
    grad_w = 2.0 * matmul(v, resid, transpose_a=True, backend=backend)
    return grad_v, grad_w


def nnmf_surrogate(x, v, w, v_n, w_n):
    """Direct evaluation of the separable majorizer of the Frobenius loss.

    Requires strictly positive anchor factors (the per-component weights
    a/b are undefined otherwise).  Intended for property tests on small
    instances; the triple sum is materialized densely.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    v_n = np.asarray(v_n, dtype=np.float64)
    w_n = np.asarray(w_n, dtype=np.float64)
    if np.min(v_n) <= 0.0 or np.min(w_n) <= 0.0:
        raise DomainError("surrogate anchor factors must be strictly positive")
    parts = v_n[:, :, None] * w_n[None, :, :]          # p x r x q
    totals = parts.sum(axis=1)                          # p x q
    weight = parts / totals[:, None, :]
    scaled = (totals[:, None, :] / parts) * (v[:, :, None] * w[None, :, :])
    return float(np.sum(weight * (x[:, None, :] - scaled) ** 2))


class _FrobeniusNnmf(MmProblem):
    direction = "minimize"

    def __init__(self, problem, backend):
        self._x = problem.x
        self._backend = backend

    def objective(self, state):
        return nnmf_objective(self._x, state.v, state.w, backend=self._backend)

    def step(self, state):
        v = nnmf_update_v(self._x, state.v, state.w, backend=self._backend)
        w = nnmf_update_w(self._x, v, state.w, backend=self._backend)
        return FactorPair(v, w)

    def surrogate(self, state, anchor):
        return nnmf_surrogate(self._x, state.v, state.w, anchor.v, anchor.w)


def _initial_factors(problem, seed):
    rng = np.random.default_rng(seed)
    p, q = problem.shape
    v0 = rng.random((p, problem.rank))
    w0 = rng.random((problem.rank, q))
    return FactorPair(v0, w0)


def nnmf_run(problem, config, backend=SERIAL):
    """Factorize under the Frobenius loss from a uniform(0,1) start.

    Returns ``(FactorPair, MmTrace)``.  The objective is evaluated once per
    full (V, W) sweep for the stopping rule.
    """
    state0 = _initial_factors(problem, config.seed)
    return run_mm(_FrobeniusNnmf(problem, backend), state0, config)


def _masked_ratio(x, b, backend):
    """x / b where x > 0, else 0; positive x over a zero mean is an error."""
    if np.any((x > 0.0) & (b == 0.0)):
        raise NumericsError("reconstruction has zero mean where data is positive")

    def f(xc, bc):
        out = np.zeros_like(xc)
        m = xc > 0.0
        out[m] = xc[m] / bc[m]
        return out

    return elementwise(f, x, b, backend=backend)


def nnmf_poisson_objective(x, v, w, backend=SERIAL):
    """Poisson-model log fit: sum of x*ln(VW) - VW, with 0 ln 0 = 0."""
    b = matmul(v, w, backend=backend)
    if b.shape != np.shape(x):
        raise ShapeError(f"data is {np.shape(x)} but VW is {b.shape}")
    if np.any((np.asarray(x) > 0.0) & (b == 0.0)):
        raise NumericsError("zero reconstruction mean at a positive data entry")

    def f(xc, bc):
        out = -bc.copy()
        m = xc > 0.0
        out[m] += xc[m] * np.log(bc[m])
        return out

    terms = elementwise(f, x, b, backend=backend)
    return tree_reduce_sum(terms, backend=backend)


def _sqrt_scale(factor, numer, denom, backend):
    return elementwise(
        lambda f, n, d: f * np.sqrt(n / (d + DENOM_GUARD)),
        factor, numer, denom, backend=backend)


def nnmf_poisson_update(x, v, w, backend=SERIAL):
    """One joint square-root multiplicative update of (V, W).

    V moves first; the reconstruction is recomputed before W moves, so each
    half-step is an exact surrogate maximization for the Poisson fit.
    """
    for name, m in (("x", x), ("v", v), ("w", w)):
        _require_nonneg(name, m)
    p, q = np.shape(x)

    b = matmul(v, w, backend=backend)
    ratio = _masked_ratio(np.asarray(x, dtype=np.float64), b, backend)
    numer_v = matmul(ratio, w, transpose_b=True, backend=backend)
    w_sums = matvec(w, np.ones(q), backend=backend)
    v_next = _sqrt_scale(v, numer_v, np.broadcast_to(w_sums, (p, len(w_sums))),
                         backend)

    b = matmul(v_next, w, backend=backend)
    ratio = _masked_ratio(np.asarray(x, dtype=np.float64), b, backend)
    numer_w = matmul(v_next, ratio, transpose_a=True, backend=backend)
    v_sums = matvec(v_next, np.ones(p), transpose_a=True, backend=backend)
    w_next = _sqrt_scale(w, numer_w,
                         np.broadcast_to(v_sums[:, None], (len(v_sums), q)),
                         backend)
    return v_next, w_next


class _PoissonNnmf(MmProblem):
    direction = "maximize"

    def __init__(self, problem, backend):
        self._x = problem.x
        self._backend = backend

    def objective(self, state):
        return nnmf_poisson_objective(self._x, state.v, state.w,
                                      backend=self._backend)

    def step(self, state):
        v, w = nnmf_poisson_update(self._x, state.v, state.w,
                                   backend=self._backend)
        return FactorPair(v, w)


def nnmf_poisson_run(problem, config, backend=SERIAL):
    """Factorize under the Poisson log fit from a uniform(0,1) start."""
    state0 = _initial_factors(problem, config.seed)
    return run_mm(_PoissonNnmf(problem, backend), state0, config)


def cbcl_preprocess(raw):
    """Scale each row to mean 0.25 and (population) std 0.25, clamp to [0,1].

    Raises on constant rows, naming the row.  The clamped fraction is
    reported through the module logger.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ShapeError(f"expected a 2-D image matrix, got shape {raw.shape}")
    means = raw.mean(axis=1)
    stds = raw.std(axis=1)
    flat = np.nonzero(stds == 0.0)[0]
    if flat.size:
        raise DomainError(f"row {flat[0]} is constant; its scaling is undefined")
    scaled = (raw - means[:, None]) / stds[:, None] * 0.25 + 0.25
    clamped = np.clip(scaled, 0.0, 1.0)
    frac = float(np.mean(clamped != scaled))
    if frac > 0.0:
        log.info("cbcl_preprocess clamped %.3f%% of entries into [0, 1]",
                 100.0 * frac)
    return clamped
