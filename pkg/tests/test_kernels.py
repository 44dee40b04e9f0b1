"""Kernel correctness: shapes, hand values, oracles, and the bitwise
serial/parallel equivalence that every solver trace relies on."""

import numpy as np
import pytest

from mmkit.errors import ShapeError
from mmkit.kernels import (Backend, elementwise, matmul, matvec,
                           tree_reduce_sum)

SERIAL = Backend.serial()


def naive_matmul(a, b):
    """Triple-loop oracle (plain left-to-right accumulation)."""
    m, n = a.shape
    n2, q = b.shape
    assert n == n2
    out = np.zeros((m, q))
    for i in range(m):
        for j in range(q):
            acc = 0.0
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(7)
        a = rng.random((7, 5))
        assert np.array_equal(matmul(a, np.eye(5)), a)

    def test_hand_value(self):
        c = matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(c, [[19.0, 22.0], [43.0, 50.0]])

    def test_parallel_bitwise_equals_serial(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((200, 300))
        b = rng.standard_normal((300, 100))
        serial = matmul(a, b)
        parallel = matmul(a, b, backend=Backend.parallel(8))
        assert np.array_equal(serial, parallel)

    @pytest.mark.parametrize("ta,tb", [(False, False), (False, True),
                                       (True, False), (True, True)])
    def test_transpose_flags(self, ta, tb):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal((4, 5))
        lhs = matmul(a.T if ta else a, b.T if tb else b,
                     transpose_a=ta, transpose_b=tb)
        np.testing.assert_allclose(lhs, a @ b, rtol=1e-13)

    def test_against_naive_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((50, 60))
        b = rng.standard_normal((60, 70))
        got = matmul(a, b)
        want = naive_matmul(a, b)
        err = np.linalg.norm(got - want) / np.linalg.norm(want)
        assert err <= 1e-12

    def test_dimension_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"3x4.*5x2"):
            matmul(np.ones((3, 4)), np.ones((5, 2)))

    def test_inner_dim_zero(self):
        c = matmul(np.ones((3, 0)), np.ones((0, 2)))
        assert np.array_equal(c, np.zeros((3, 2)))

    def test_matvec(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((8, 6))
        x = rng.standard_normal(6)
        np.testing.assert_allclose(matvec(a, x), a @ x, rtol=1e-13)
        np.testing.assert_allclose(matvec(a, np.ones(8), transpose_a=True),
                                   a.sum(axis=0), rtol=1e-13)


class TestTreeReduce:
    def test_empty(self):
        assert tree_reduce_sum([]) == 0.0

    def test_fixed_association(self):
        # the documented association for four elements
        x = [0.1, 0.2, 0.3, 0.4]
        assert tree_reduce_sum(x) == (0.1 + 0.2) + (0.3 + 0.4)
        assert tree_reduce_sum([1.0, 2.0, 3.0, 4.0]) == 10.0

    def test_odd_lengths(self):
        x = [1.0, 2.0, 3.0]
        assert tree_reduce_sum(x) == (1.0 + 2.0) + 3.0
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        assert tree_reduce_sum(x) == ((1.0 + 2.0) + (3.0 + 4.0)) + 5.0

    def test_parallel_bitwise_equals_serial_large(self):
        rng = np.random.default_rng(13)
        v = rng.standard_normal(10 ** 6)
        serial = tree_reduce_sum(v)
        for threads in (2, 4, 8):
            assert tree_reduce_sum(v, backend=Backend.parallel(threads)) == serial

    def test_flattens_matrices(self):
        assert tree_reduce_sum(np.array([[1.0, 2.0], [3.0, 4.0]])) == 10.0


class TestElementwise:
    def test_identity(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 7))
        assert np.array_equal(elementwise(lambda x: x, a), a)

    def test_division_by_ones(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((6, 3))
        assert np.array_equal(elementwise(lambda x, y: x / y, a,
                                          np.ones((6, 3))), a)

    def test_ternary_parallel_bitwise(self):
        rng = np.random.default_rng(6)
        a, b, c = (rng.random((40, 30)) + 0.5 for _ in range(3))
        f = lambda x, y, z: x * y / z
        serial = elementwise(f, a, b, c)
        parallel = elementwise(f, a, b, c, backend=Backend.parallel(8))
        assert np.array_equal(serial, parallel)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise(lambda x, y: x + y, np.ones((2, 3)), np.ones((3, 2)))

    def test_vectors(self):
        v = np.arange(5.0)
        assert np.array_equal(elementwise(lambda x: 2 * x, v), 2 * v)


class TestBackendEquivalence:
    """Bitwise serial/parallel agreement across kernels, thread counts 1-16,
    and 50 random shape combinations."""

    def test_sweep(self):
        rng = np.random.default_rng(42)
        thread_counts = list(range(1, 17))
        for case in range(50):
            m, n, q = rng.integers(1, 24, size=3)
            a = rng.standard_normal((m, n))
            b = rng.standard_normal((n, q))
            v = rng.standard_normal(int(rng.integers(0, 400)))
            mm_serial = matmul(a, b)
            tr_serial = tree_reduce_sum(v)
            ew_serial = elementwise(lambda x, y: x * y + 0.5, a, a)
            threads = thread_counts[case % len(thread_counts)]
            backend = Backend.parallel(threads)
            assert np.array_equal(matmul(a, b, backend=backend), mm_serial)
            assert tree_reduce_sum(v, backend=backend) == tr_serial
            assert np.array_equal(
                elementwise(lambda x, y: x * y + 0.5, a, a, backend=backend),
                ew_serial)

    def test_every_thread_count_once(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal((31, 17))
        b = rng.standard_normal((17, 23))
        v = rng.standard_normal(10_001)
        mm_serial = matmul(a, b)
        tr_serial = tree_reduce_sum(v)
        for threads in range(1, 17):
            backend = Backend.parallel(threads)
            assert np.array_equal(matmul(a, b, backend=backend), mm_serial)
            assert tree_reduce_sum(v, backend=backend) == tr_serial


def test_throughput_scaling_reported(capsys):
    """Soft performance check: reported, never asserted."""
    import time
    rng = np.random.default_rng(1)
    a = rng.random((1000, 1000))
    b = rng.random((1000, 1000))
    matmul(a[:4], b)  # warm the JIT cache
    t0 = time.perf_counter()
    serial = matmul(a, b)
    t_serial = time.perf_counter() - t0
    t0 = time.perf_counter()
    parallel = matmul(a, b, backend=Backend.parallel(4))
    t_parallel = time.perf_counter() - t0
    assert np.array_equal(serial, parallel)
    with capsys.disabled():
        print(f"\n[report] 1000x1000 matmul: serial {t_serial:.2f}s, "
              f"parallel(4) {t_parallel:.2f}s, "
              f"speedup {t_serial / t_parallel:.2f}x")
