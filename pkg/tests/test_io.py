"""Persistence round trips, format errors, PGM rendering, manifests."""

import numpy as np
import pytest

from mmkit.driver import MmConfig, MmTrace
from mmkit.errors import DomainError, MatrixFormatError
from mmkit.io import (RunManifest, load_matrix, save_matrix, sha256_file,
                      write_pgm, write_trace_csv)
from mmkit.nnmf import NnmfProblem, nnmf_run


class TestMatrixRoundTrip:
    def test_binary_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((13, 7))
        path = tmp_path / "m.mmx"
        save_matrix(m, path)
        assert np.array_equal(load_matrix(path), m)

    def test_csv_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((6, 4)) * 1e-7
        path = tmp_path / "m.csv"
        save_matrix(m, path)
        # shortest round-trip decimals reproduce every float exactly
        assert np.array_equal(load_matrix(path), m)

    def test_csv_hand_content(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,4\n")
        assert np.array_equal(load_matrix(path), [[1.0, 2.0], [3.0, 4.0]])

    def test_explicit_format_override(self, tmp_path):
        m = np.array([[1.0, 2.0]])
        path = tmp_path / "data.bin"
        save_matrix(m, path, fmt="binary")
        assert np.array_equal(load_matrix(path, fmt="binary"), m)

    def test_unknown_extension_rejected(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            save_matrix(np.ones((1, 1)), tmp_path / "m.dat")


class TestMatrixErrors:
    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,4,5\n")
        with pytest.raises(MatrixFormatError, match="line 2"):
            load_matrix(path)

    def test_non_numeric_field_named(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,oops\n")
        with pytest.raises(MatrixFormatError, match="line 2, field 2"):
            load_matrix(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("")
        with pytest.raises(MatrixFormatError, match="empty"):
            load_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.mmx"
        path.write_bytes(b"NOPE" + b"\x00" * 24)
        with pytest.raises(MatrixFormatError, match="magic"):
            load_matrix(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.mmx"
        save_matrix(np.ones((2, 2)), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(MatrixFormatError, match="bytes"):
            load_matrix(path)


class TestPgm:
    @staticmethod
    def parse(path):
        blob = path.read_bytes()
        magic, dims, maxval, rest = blob.split(b"\n", 3)
        assert magic == b"P5"
        width, height = (int(v) for v in dims.split())
        assert maxval == b"65535"
        pixels = np.frombuffer(rest, dtype=">u2").reshape(height, width)
        return pixels

    def test_single_pixel_maps_to_full_scale(self, tmp_path):
        path = tmp_path / "one.pgm"
        write_pgm(np.array([[5.0]]), path)
        assert np.array_equal(self.parse(path), [[65535]])

    def test_all_zero_image(self, tmp_path):
        path = tmp_path / "zero.pgm"
        write_pgm(np.zeros((2, 2)), path)
        assert np.array_equal(self.parse(path), np.zeros((2, 2)))

    def test_two_level_image(self, tmp_path):
        path = tmp_path / "two.pgm"
        write_pgm(np.array([[0.0, 4.0], [4.0, 0.0]]), path)
        assert np.array_equal(self.parse(path),
                              [[0, 65535], [65535, 0]])

    def test_negative_entries_rejected(self, tmp_path):
        with pytest.raises(DomainError):
            write_pgm(np.array([[-1.0]]), tmp_path / "bad.pgm")


class TestTraceCsv:
    def test_columns_and_values(self, tmp_path):
        trace = MmTrace(objective_values=np.array([4.0, 2.0, 1.5]),
                        cumulative_seconds=np.array([0.0, 0.25, 0.5]),
                        iters=2, converged=True, wall_time=0.5,
                        final_relative_change=0.1)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iter,objective,cumulative_seconds"
        assert lines[1] == "0,4.0,0.0"
        assert len(lines) == 4


class TestManifest:
    def make(self, wall):
        return RunManifest(solver="nnmf", config={"epsilon": 1e-9, "seed": 0},
                           backend="serial", threads=1,
                           inputs={"input": "ab12"}, converged=True,
                           final_objective=1.5, iterations=10,
                           wall_time_s=wall)

    def test_round_trip(self, tmp_path):
        m = self.make(1.0)
        path = tmp_path / "run.json"
        m.save(path)
        assert RunManifest.load(path) == m

    def test_equivalent_ignores_wall_time(self):
        assert self.make(1.0).equivalent(self.make(2.0))
        other = self.make(1.0)
        other.iterations = 11
        assert not self.make(1.0).equivalent(other)

    def test_equal_manifests_mean_identical_outputs(self, tmp_path):
        rng = np.random.default_rng(3)
        problem = NnmfProblem(x=rng.random((8, 6)), rank=2)
        results = []
        for run in range(2):
            state, trace = nnmf_run(problem, MmConfig(max_iters=30, seed=9))
            manifest = RunManifest(
                solver="nnmf", config={"seed": 9, "rank": 2},
                backend="serial", threads=1, inputs={},
                converged=bool(trace.converged),
                final_objective=float(trace.objective_values[-1]),
                iterations=trace.iters, wall_time_s=trace.wall_time)
            results.append((state, manifest))
        (state_a, man_a), (state_b, man_b) = results
        assert man_a.equivalent(man_b)
        assert np.array_equal(state_a.v, state_b.v)
        assert np.array_equal(state_a.w, state_b.w)


def test_sha256_stable(tmp_path):
    path = tmp_path / "f.bin"
    path.write_bytes(b"hello")
    assert sha256_file(path) == sha256_file(path)
