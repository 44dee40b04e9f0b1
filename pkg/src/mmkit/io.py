"""Matrix and image persistence plus reproducible-run metadata.

Two matrix formats: human-readable CSV (shortest round-trip decimals) and a
little-endian binary layout ("MMX1" magic, two u64 dims, row-major f8
payload) whose round trip is bitwise exact on any host.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, MatrixFormatError, ShapeError

__all__ = [
    "load_matrix", "save_matrix", "write_pgm", "write_trace_csv",
    "RunManifest", "sha256_file",
]

MAGIC = b"MMX1"
_HEADER = struct.Struct("<QQ")


def _format_for(path, fmt):
    if fmt != "auto":
        if fmt not in ("csv", "binary"):
            raise MatrixFormatError(f"unknown matrix format {fmt!r}")
        return fmt
    name = str(path).lower()
    if name.endswith(".csv"):
        return "csv"
    if name.endswith(".mmx"):
        return "binary"
    raise MatrixFormatError(
        f"cannot infer format from {path!r}; use .csv or .mmx, or pass "
        "format explicitly")


def save_matrix(matrix, path, fmt="auto"):
    """Write a dense matrix as CSV or MMX1 binary (chosen by extension when
    fmt='auto')."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
    if m.ndim != 2:
        raise ShapeError(f"can only save 2-D matrices, got shape {m.shape}")
    fmt = _format_for(path, fmt)
    if fmt == "csv":
        with open(path, "w", encoding="ascii") as fh:
            for row in m:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
    else:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_HEADER.pack(m.shape[0], m.shape[1]))
            fh.write(m.astype("<f8", copy=False).tobytes(order="C"))


def _load_csv(path):
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise MatrixFormatError(
                    f"{path}: line {lineno}: expected {width} fields, "
                    f"found {len(fields)}")
            parsed = []
            for col, text in enumerate(fields, start=1):
                try:
                    value = float(text)
                except ValueError:
                    raise MatrixFormatError(
                        f"{path}: line {lineno}, field {col}: "
                        f"{text.strip()!r} is not a number") from None
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise MatrixFormatError(f"{path}: empty matrix file")
    return np.array(rows, dtype=np.float64)


def _load_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise MatrixFormatError(
            f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 4 + _HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header "
                                f"({len(blob)} bytes)")
    rows, cols = _HEADER.unpack_from(blob, 4)
    expected = 4 + _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise MatrixFormatError(
            f"{path}: payload for {rows}x{cols} needs {expected} bytes, "
            f"file has {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=4 + _HEADER.size)
    return data.astype(np.float64).reshape(rows, cols)


def load_matrix(path, fmt="auto"):
    """Read a matrix written by ``save_matrix``."""
    fmt = _format_for(path, fmt)
    return _load_csv(path) if fmt == "csv" else _load_binary(path)


def write_pgm(image, path):
    """16-bit binary PGM, linearly scaled so the max entry maps to 65535.

    An all-zero image maps to all-zero pixels; negative entries are an
    error.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"image must be 2-D, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise DomainError("image contains non-finite entries")
    if np.min(img) < 0.0:
        raise DomainError("image entries must be nonnegative")
    peak = float(img.max())
    scaled = np.zeros_like(img) if peak == 0.0 else img * (65535.0 / peak)
    pixels = np.rint(scaled).astype(">u2")
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))


def write_trace_csv(trace, path):
    """Iteration trace as CSV: iter, objective, cumulative_seconds."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("iter,objective,cumulative_seconds\n")
        for it, (value, secs) in enumerate(
                zip(trace.objective_values, trace.cumulative_seconds)):
            fh.write(f"{it},{float(value)!r},{float(secs)!r}\n")


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """What a run saw and produced, minus anything non-reproducible.

    Two manifests that agree apart from wall time describe runs that must
    have produced bitwise identical outputs.
    """

    solver: str
    config: dict
    backend: str
    threads: int
    inputs: dict
    converged: bool
    final_objective: float
    iterations: int
    wall_time_s: float

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="ascii") as fh:
            return cls(**json.load(fh))

    def equivalent(self, other):
        """Equality ignoring wall time."""
        mine = asdict(self)
        theirs = asdict(other)
        mine.pop("wall_time_s")
        theirs.pop("wall_time_s")
        return mine == theirs
