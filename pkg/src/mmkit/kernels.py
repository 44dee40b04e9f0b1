"""Deterministic data-parallel dense kernels.

All reductions use a fixed pairwise (tree) summation order, so results are
bitwise identical no matter how many worker threads execute them.  Parallelism
comes from partitioning *disjoint output rows* across a thread pool; the
arithmetic performed for any given output element never depends on the
partition.  That property is what makes iteration traces reproducible across
machines and thread counts, and it is asserted by the test suite rather than
assumed.

No BLAS is used on purpose: the point of this module is an explicit,
inspectable parallel decomposition of the matrix products the solvers need.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ShapeError

__all__ = ["Backend", "matmul", "matvec", "tree_reduce_sum", "elementwise",
           "run_partitioned"]


@dataclass(frozen=True)
class Backend:
    """Execution mode for the kernels: serial, or a thread-pool of workers.

    Results are bitwise identical either way; the backend only chooses how
    output partitions are scheduled.
    """

    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ShapeError(f"backend needs at least 1 thread, got {self.threads}")

    @staticmethod
    def serial():
        return Backend(1)

    @staticmethod
    def parallel(threads):
        return Backend(threads)

    @property
    def is_parallel(self):
        return self.threads > 1

    @property
    def mode(self):
        return "parallel" if self.is_parallel else "serial"


SERIAL = Backend.serial()

_POOL = None
_POOL_SIZE = 0
_POOL_LOCK = threading.Lock()


def _get_pool(workers):
    """Shared worker pool, grown on demand (never shrunk)."""
    global _POOL, _POOL_SIZE
    with _POOL_LOCK:
        if _POOL is None or _POOL_SIZE < workers:
            if _POOL is not None:
                _POOL.shutdown(wait=True)
            _POOL = ThreadPoolExecutor(max_workers=workers,
                                       thread_name_prefix="mmkit-kernel")
            _POOL_SIZE = workers
        return _POOL


def _partition(n, parts):
    """Split range(n) into at most `parts` contiguous chunks."""
    parts = min(parts, n)
    base, extra = divmod(n, parts)
    bounds = []
    lo = 0
    for i in range(parts):
        hi = lo + base + (1 if i < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def run_partitioned(fn, n, backend, *args):
    """Invoke ``fn(*args, lo, hi)`` over a partition of range(n).

    Serial backends make a single call covering [0, n).  Parallel backends
    split the range into contiguous chunks across the worker pool.  ``fn``
    must write only to rows [lo, hi) of its output, so the partition cannot
    change the result.
    """
    if n == 0:
        return
    if not backend.is_parallel or n == 1:
        fn(*args, 0, n)
        return
    chunks = _partition(n, backend.threads)
    pool = _get_pool(backend.threads)
    futures = [pool.submit(fn, *args, lo, hi) for lo, hi in chunks]
    for fut in futures:
        fut.result()


@njit(cache=True, nogil=True)
def _pairwise_collapse(buf, n):
    """Reduce buf[:n] in place by repeated pairwise halving; return the sum.

    Association is ((x0+x1)+(x2+x3))+... at every level, with an odd tail
    element carried to the next level unchanged.
    """
    if n == 0:
        return 0.0
    while n > 1:
        half = n // 2
        for t in range(half):
            buf[t] = buf[2 * t] + buf[2 * t + 1]
        if n & 1:
            buf[half] = buf[n - 1]
            n = half + 1
        else:
            n = half
    return buf[0]


@njit(cache=True, nogil=True)
def _reduce_level(src, dst, lo, hi):
    for t in range(lo, hi):
        dst[t] = src[2 * t] + src[2 * t + 1]


# Inner products below fuse the multiply into the first halving level, then
# collapse the remaining buffer; the association order is identical to
# filling buf with all n products and calling _pairwise_collapse(buf, n).

@njit(cache=True, nogil=True)
def _mm_nn(a, b, out, lo, hi):
    n = a.shape[1]
    q = b.shape[1]
    half = n // 2
    m = half + 1 if n & 1 else half
    buf = np.empty(max(m, 1))
    for i in range(lo, hi):
        for j in range(q):
            for t in range(half):
                buf[t] = a[i, 2 * t] * b[2 * t, j] + a[i, 2 * t + 1] * b[2 * t + 1, j]
            if n & 1:
                buf[half] = a[i, n - 1] * b[n - 1, j]
            out[i, j] = _pairwise_collapse(buf, m) if n > 0 else 0.0


@njit(cache=True, nogil=True)
def _mm_nt(a, b, out, lo, hi):
    n = a.shape[1]
    q = b.shape[0]
    half = n // 2
    m = half + 1 if n & 1 else half
    buf = np.empty(max(m, 1))
    for i in range(lo, hi):
        for j in range(q):
            for t in range(half):
                buf[t] = a[i, 2 * t] * b[j, 2 * t] + a[i, 2 * t + 1] * b[j, 2 * t + 1]
            if n & 1:
                buf[half] = a[i, n - 1] * b[j, n - 1]
            out[i, j] = _pairwise_collapse(buf, m) if n > 0 else 0.0


@njit(cache=True, nogil=True)
def _mm_tn(a, b, out, lo, hi):
    n = a.shape[0]
    q = b.shape[1]
    half = n // 2
    m = half + 1 if n & 1 else half
    buf = np.empty(max(m, 1))
    for i in range(lo, hi):
        for j in range(q):
            for t in range(half):
                buf[t] = a[2 * t, i] * b[2 * t, j] + a[2 * t + 1, i] * b[2 * t + 1, j]
            if n & 1:
                buf[half] = a[n - 1, i] * b[n - 1, j]
            out[i, j] = _pairwise_collapse(buf, m) if n > 0 else 0.0


@njit(cache=True, nogil=True)
def _mm_tt(a, b, out, lo, hi):
    n = a.shape[0]
    q = b.shape[0]
    half = n // 2
    m = half + 1 if n & 1 else half
    buf = np.empty(max(m, 1))
    for i in range(lo, hi):
        for j in range(q):
            for t in range(half):
                buf[t] = a[2 * t, i] * b[j, 2 * t] + a[2 * t + 1, i] * b[j, 2 * t + 1]
            if n & 1:
                buf[half] = a[n - 1, i] * b[j, n - 1]
            out[i, j] = _pairwise_collapse(buf, m) if n > 0 else 0.0


_MM_KERNELS = {
    (False, False): _mm_nn,
    (False, True): _mm_nt,
    (True, False): _mm_tn,
    (True, True): _mm_tt,
}


def _as_matrix(x, name):
    m = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {np.asarray(x).shape}")
    return m


def matmul(a, b, transpose_a=False, transpose_b=False, backend=SERIAL):
    """C = op(A) @ op(B) with tree-summed inner products.

    Transposition is handled by index mapping; no physical transpose is
    taken.  Rows of C are partitioned across workers, so parallel results
    are bitwise identical to serial ones.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    rows, inner_a = (a.shape[1], a.shape[0]) if transpose_a else a.shape
    inner_b, cols = (b.shape[1], b.shape[0]) if transpose_b else b.shape
    if inner_a != inner_b:
        raise ShapeError(
            f"inner dimensions do not agree: a{'^T' if transpose_a else ''} is "
            f"{rows}x{inner_a}, b{'^T' if transpose_b else ''} is {inner_b}x{cols}"
        )
    out = np.empty((rows, cols))
    kern = _MM_KERNELS[(bool(transpose_a), bool(transpose_b))]
    run_partitioned(kern, rows, backend, a, b, out)
    return out


def matvec(a, x, transpose_a=False, backend=SERIAL):
    """op(A) @ x for a 1-D vector x, via the matmul kernel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"x must be 1-D, got shape {x.shape}")
    return matmul(a, x.reshape(-1, 1), transpose_a=transpose_a,
                  backend=backend)[:, 0]


# Parallel tree reduction processes one halving level at a time so that the
# association matches the serial collapse exactly; below this size the level
# bookkeeping costs more than it saves.
_PARALLEL_REDUCE_MIN = 8192


def tree_reduce_sum(v, backend=SERIAL):
    """Sum of v in fixed pairwise-halving order, independent of thread count.

    Multidimensional input is flattened in row-major order.  The empty sum
    is 0.0.
    """
    v = np.ascontiguousarray(np.asarray(v, dtype=np.float64)).ravel()
    n = v.shape[0]
    if n == 0:
        return 0.0
    if not backend.is_parallel or n < _PARALLEL_REDUCE_MIN:
        return float(_pairwise_collapse(v.copy(), n))
    src = v.copy()
    dst = np.empty((n + 1) // 2)
    while n > 1:
        half = n // 2
        run_partitioned(_reduce_level, half, backend, src, dst)
        if n & 1:
            dst[half] = src[n - 1]
            n = half + 1
        else:
            n = half
        src, dst = dst, src
    return float(src[0])


def elementwise(f, *arrays, backend=SERIAL):
    """Apply an index-wise map f over conforming arrays.

    ``f`` receives aligned chunks of each array and must act purely
    elementwise on them (numpy expressions are fine).  The output partition
    is split along axis 0; since no cross-element reduction happens, the
    result is bitwise independent of the backend.
    """
    if not arrays:
        raise ShapeError("elementwise needs at least one array")
    arrs = tuple(np.asarray(x, dtype=np.float64) for x in arrays)
    shape = arrs[0].shape
    if arrs[0].ndim < 1:
        raise ShapeError("elementwise operands must have at least 1 dimension")
    for k, x in enumerate(arrs[1:], start=1):
        if x.shape != shape:
            raise ShapeError(
                f"operand {k} has shape {x.shape}, expected {shape}"
            )
    out = np.empty(shape)

    def worker(lo, hi):
        out[lo:hi] = f(*(x[lo:hi] for x in arrs))

    run_partitioned(worker, shape[0], backend)
    return out
