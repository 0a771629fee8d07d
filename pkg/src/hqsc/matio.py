"""Matrix I/O: load, save, validate, and column-normalize data matrices.

A data matrix holds one point per column. Two on-disk formats are
supported:

* ``csv``  -- row-major, comma-separated, no header by default. A header
  row is detected (and skipped) when the first line contains a token that
  does not parse as a float.
* ``bin``  -- magic bytes ``CILM``, one version byte, then ``d`` and ``n``
  as 64-bit little-endian unsigned integers, then ``d*n`` IEEE-754 doubles
  in row-major order. Round trips are bit exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

BIN_MAGIC = b"CILM"
BIN_VERSION = 1

FORMATS = ("csv", "bin")


@dataclass
class DataMatrix:
    """A d-by-n real matrix whose columns are data points.

    Attributes
    ----------
    values : ndarray of shape (d, n)
        Finite float64 entries; one point per column.
    image_shape : tuple (h, w), optional
        Set when columns are flattened images (row-major); h*w must equal d.
    labels : ndarray of shape (n,), optional
        Integer ground-truth labels forming a contiguous set {0..k-1}.
    """

    values: np.ndarray
    image_shape: tuple[int, int] | None = None
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"matrix must be 2-D, got shape {v.shape}")
        d, n = v.shape
        if d < 1 or n < 2:
            raise DataError(f"matrix needs d >= 1 and n >= 2, got d={d}, n={n}")
        if not np.isfinite(v).all():
            raise DataError("matrix contains non-finite entries")
        self.values = v
        if self.image_shape is not None:
            h, w = self.image_shape
            if h < 1 or w < 1 or h * w != d:
                raise DataError(
                    f"image_shape {self.image_shape} inconsistent with d={d}"
                )
            self.image_shape = (int(h), int(w))
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (n,):
                raise DataError(f"labels must have shape ({n},), got {lab.shape}")
            if not np.issubdtype(lab.dtype, np.integer):
                raise DataError("labels must be integers")
            lab = lab.astype(np.int64)
            uniq = np.unique(lab)
            if uniq[0] != 0 or uniq[-1] != uniq.size - 1:
                raise DataError("labels must form a contiguous set {0..k-1}")
            self.labels = lab

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def replace_values(self, values: np.ndarray) -> "DataMatrix":
        """New DataMatrix with the same metadata but different entries."""
        return DataMatrix(values, image_shape=self.image_shape, labels=self.labels)


def load_matrix(path, fmt: str = "csv") -> DataMatrix:
    """Read a data matrix from ``path``.

    Parameters
    ----------
    path : str or Path
    fmt : {"csv", "bin"}

    Raises
    ------
    DataError
        On parse failure, ragged rows, non-finite entries, or an empty or
        truncated file.
    """
    path = Path(path)
    if fmt == "csv":
        values = _read_csv(path)
    elif fmt == "bin":
        values = _read_bin(path)
    else:
        raise ConfigError(f"unknown matrix format {fmt!r}; choose from {FORMATS}")
    return DataMatrix(values)


def save_matrix(matrix: DataMatrix, path, fmt: str = "csv") -> None:
    """Write ``matrix`` to ``path``.

    CSV entries are written with shortest round-trip float formatting, so a
    save/load cycle reproduces every entry exactly; bin is bit exact by
    construction.
    """
    path = Path(path)
    v = matrix.values
    if fmt == "csv":
        with open(path, "w", encoding="ascii") as fh:
            for row in v:
                fh.write(",".join(repr(float(x)) for x in row))
                fh.write("\n")
    elif fmt == "bin":
        d, n = v.shape
        with open(path, "wb") as fh:
            fh.write(BIN_MAGIC)
            fh.write(bytes([BIN_VERSION]))
            fh.write(struct.pack("<QQ", d, n))
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    else:
        raise ConfigError(f"unknown matrix format {fmt!r}; choose from {FORMATS}")


def normalize_columns(matrix: DataMatrix) -> DataMatrix:
    """Scale every column to unit L2 norm.

    Idempotent and direction preserving. A column with exactly zero norm is
    an error; silently dividing by zero is never done, the caller must drop
    or perturb such columns first.
    """
    v = matrix.values
    norms = np.sqrt((v * v).sum(axis=0))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataError(f"cannot normalize zero column(s) at indices {zero.tolist()}")
    return matrix.replace_values(v / norms)


def load_labels(path) -> np.ndarray:
    """Read an integer label file (one label per line)."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not an integer: {line!r}")
    if not out:
        raise DataError(f"{path}: empty label file")
    return np.asarray(out, dtype=np.int64)


def save_labels(labels: np.ndarray, path) -> None:
    """Write labels as one integer per line."""
    with open(path, "w", encoding="ascii") as fh:
        for lab in np.asarray(labels).ravel():
            fh.write(f"{int(lab)}\n")


def _read_csv(path: Path) -> np.ndarray:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty matrix file")
    rows: list[list[float]] = []
    start = 0
    first = lines[0].split(",")
    if not _all_floats(first):
        start = 1  # header row
        if len(lines) == 1:
            raise DataError(f"{path}: header only, no data rows")
    width = None
    for lineno in range(start, len(lines)):
        toks = lines[lineno].split(",")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise DataError(
                f"{path}: ragged row at line {lineno + 1}: "
                f"expected {width} fields, got {len(toks)}"
            )
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise DataError(f"{path}: parse failure at line {lineno + 1}: {exc}")
    values = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: matrix contains non-finite entries")
    return values


def _all_floats(tokens) -> bool:
    for t in tokens:
        try:
            float(t)
        except ValueError:
            return False
    return True


def _read_bin(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = len(BIN_MAGIC) + 1 + 16
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    if raw[: len(BIN_MAGIC)] != BIN_MAGIC:
        raise DataError(f"{path}: bad magic bytes, not a bin matrix file")
    version = raw[len(BIN_MAGIC)]
    if version != BIN_VERSION:
        raise DataError(f"{path}: unsupported bin version {version}")
    d, n = struct.unpack_from("<QQ", raw, len(BIN_MAGIC) + 1)
    expected = header + 8 * d * n
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=header).reshape(d, n).copy()
    if not np.isfinite(values).all():
        raise DataError(f"{path}: matrix contains non-finite entries")
    return values
