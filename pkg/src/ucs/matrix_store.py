"""Binary matrix store, label files, token bundles, and run manifests.

Matrix files use a fixed little-endian layout:

    bytes 0..3    magic ``UCSM`` (ASCII)
    bytes 4..5    format version, u16 (currently 1)
    byte  6       dtype code: 0 = float32, 1 = float64
    bytes 7..14   row count, u64
    bytes 15..22  column count, u64
    bytes 23..    payload, row-major, little-endian

All matrices are widened to float64 in memory regardless of the stored dtype.
A CSV alternative (header ``c0,c1,...``) is accepted on read for interchange.
Non-finite values are rejected on both read and write.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionOverflow,
    IoError,
    NonFiniteValue,
    ParseError,
)

MAGIC = b"UCSM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBQQ")  # magic, version, dtype, rows, cols

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_NAMES = {"f32": 0, "f64": 1}

# Hard cap on declared element count; anything larger is a corrupt header.
_MAX_ELEMENTS = 1 << 40


def write_matrix(matrix: np.ndarray, path: str | os.PathLike, dtype: str = "f64") -> None:
    """Write a 2-D array to `path` in the binary layout above.

    dtype is "f64" (default, exact round trip) or "f32" (lossy storage).
    Raises NonFiniteValue if the array contains NaN or Inf, IoError on
    filesystem failure.
    """
    if dtype not in _DTYPE_NAMES:
        raise ValueError(f"unsupported dtype {dtype!r}; expected 'f32' or 'f64'")
    arr = np.ascontiguousarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteValue(
            f"non-finite value at row {bad[0]}, col {bad[1]}; refusing to write"
        )
    code = _DTYPE_NAMES[dtype]
    payload = arr.astype(_DTYPE_CODES[code], copy=False)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, code, arr.shape[0], arr.shape[1])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    """Read a matrix from `path`, accepting the binary layout or CSV.

    Returns a float64 array. Raises BadMagic / DimensionOverflow /
    NonFiniteValue / ParseError with the offending offset or line.
    """
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
            if head == MAGIC:
                rest = fh.read(_HEADER.size - 4)
                if len(rest) != _HEADER.size - 4:
                    raise DimensionOverflow(
                        f"{path}: truncated header ({4 + len(rest)} bytes)"
                    )
                _, version, code, rows, cols = _HEADER.unpack(head + rest)
                payload = fh.read()
            else:
                payload = None
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if payload is None:
        return _read_matrix_csv(path)

    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {version}")
    if code not in _DTYPE_CODES:
        raise ParseError(f"{path}: unknown dtype code {code} at byte 6")
    if cols < 1:
        raise DimensionOverflow(f"{path}: column count must be >= 1, got {cols}")
    if rows * cols > _MAX_ELEMENTS:
        raise DimensionOverflow(f"{path}: declared {rows}x{cols} exceeds element cap")
    dt = _DTYPE_CODES[code]
    expected = rows * cols * dt.itemsize
    if len(payload) != expected:
        raise DimensionOverflow(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(rows, cols).astype(np.float64)
    if rows and not np.isfinite(arr).all():
        flat = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        offset = _HEADER.size + flat * dt.itemsize
        raise NonFiniteValue(f"{path}: non-finite value at byte offset {offset}")
    return arr


def _read_matrix_csv(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise BadMagic(f"{path}: not a UCSM file and not readable as CSV ({exc})") from exc
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if header != [f"c{i}" for i in range(len(header))]:
        raise BadMagic(f"{path}: bad magic bytes and line 1 is not a c0,c1,... header")
    cols = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != cols:
            raise ParseError(f"{path}: line {lineno}: expected {cols} fields, got {len(cells)}")
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteValue(f"{path}: non-finite value at line {lineno}")
        rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(len(rows), cols)


def write_labels(labels: np.ndarray, path: str | os.PathLike) -> None:
    """Write integer labels, one per line."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {arr.shape}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for v in arr:
                fh.write(f"{int(v)}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_labels(path: str | os.PathLike) -> np.ndarray:
    """Read one integer label per line; -1 (pre-remap noise) is allowed."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    out = np.empty(len(lines), dtype=np.int64)
    n = 0
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            value = int(text)
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: not an integer: {text!r}") from exc
        if value < -1:
            raise ParseError(f"{path}: line {lineno}: label {value} below -1")
        out[n] = value
        n += 1
    return out[:n].copy()


# ---------------------------------------------------------------------------
# Token bundles: a directory of per-example (hidden states, mask) pairs.
# Example i is stored as <stem>.tokens.ucsm (T_i x d) and <stem>.mask.ucsm
# (T_i x 1, entries 0/1); examples are ordered by stem.

TOKENS_SUFFIX = ".tokens.ucsm"
MASK_SUFFIX = ".mask.ucsm"


def write_token_bundle(
    directory: str | os.PathLike,
    examples: list[tuple[np.ndarray, np.ndarray]],
    stem_width: int = 6,
) -> None:
    """Write (hidden, mask) pairs as a token bundle under `directory`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (hidden, mask) in enumerate(examples):
        mask_col = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
        if mask_col.shape[0] != np.asarray(hidden).shape[0]:
            raise DimensionOverflow(
                f"example {i}: mask length {mask_col.shape[0]} != token count"
            )
        stem = f"ex{i:0{stem_width}d}"
        write_matrix(np.asarray(hidden, dtype=np.float64), d / f"{stem}{TOKENS_SUFFIX}")
        write_matrix(mask_col, d / f"{stem}{MASK_SUFFIX}")


def read_token_bundle(directory: str | os.PathLike) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Read a token bundle; returns (stem, hidden T x d, mask T) sorted by stem."""
    d = Path(directory)
    if not d.is_dir():
        raise IoError(f"{directory} is not a directory")
    stems = sorted(p.name[: -len(TOKENS_SUFFIX)] for p in d.glob(f"*{TOKENS_SUFFIX}"))
    if not stems:
        raise ParseError(f"{directory}: no *{TOKENS_SUFFIX} files found")
    out = []
    for stem in stems:
        hidden = read_matrix(d / f"{stem}{TOKENS_SUFFIX}")
        mask_path = d / f"{stem}{MASK_SUFFIX}"
        if not mask_path.exists():
            raise ParseError(f"{directory}: missing mask for {stem}")
        mask = read_matrix(mask_path)
        if mask.shape != (hidden.shape[0], 1):
            raise DimensionOverflow(
                f"{directory}/{stem}: mask shape {mask.shape} does not match "
                f"{hidden.shape[0]} tokens"
            )
        out.append((stem, hidden, mask[:, 0]))
    return out


# ---------------------------------------------------------------------------
# Run manifests: flat key=value text, keys sorted lexicographically. A stage
# rerun from the same manifest (same config, same input hashes, same seed)
# must emit byte-identical artifacts; the timestamp key is informational and
# is the only field allowed to differ between such reruns.


def write_manifest(path: str | os.PathLike, entries: dict[str, str]) -> None:
    items = []
    for key in sorted(entries):
        value = str(entries[key])
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"manifest entry {key!r} contains a reserved character")
        items.append(f"{key}={value}\n")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(items)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_manifest(path: str | os.PathLike) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    out: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key] = value
    return out


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise IoError(f"cannot hash {path}: {exc}") from exc
    return h.hexdigest()
