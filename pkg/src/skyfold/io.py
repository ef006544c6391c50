"""Binary and CSV serialization for images, sketches, and result tables.

Binary layouts are little-endian and self-describing: images carry their side
length, sketches their row/bucket geometry.  CSV files open with ``#`` comment
lines echoing the resolved run constants so every artifact states the
configuration that produced it.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .measurement import Sketch
from .recovery import RecoveryResult

PathLike = Union[str, Path]

_U4 = np.dtype("<u4")
_F8 = np.dtype("<f8")


def save_image(path: PathLike, image: np.ndarray) -> None:
    """Write a square image: uint32 side length, then row-major float64."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    with open(path, "wb") as fh:
        fh.write(np.asarray([image.shape[0]], dtype=_U4).tobytes())
        fh.write(np.ascontiguousarray(image, dtype=_F8).tobytes())


def load_image(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise ValueError(f"{path}: truncated image header")
        n = int(np.frombuffer(head, dtype=_U4)[0])
        data = np.frombuffer(fh.read(), dtype=_F8)
    if data.size != n * n:
        raise ValueError(f"{path}: expected {n * n} pixels, found {data.size}")
    return data.reshape(n, n).copy()


def save_sketch(path: PathLike, sketch: Sketch) -> None:
    """Header: uint32 s, uint32 bucket count per row, uint32 cell width."""
    counts = sketch.bucket_counts
    header = np.asarray([sketch.s, *counts, sketch.w_prime], dtype=_U4)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(sketch.concat().astype(_F8).tobytes())


def load_sketch(path: PathLike) -> Sketch:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise ValueError(f"{path}: truncated sketch header")
        s = int(np.frombuffer(head, dtype=_U4)[0])
        rest = np.frombuffer(fh.read(4 * (s + 1)), dtype=_U4)
        if rest.size != s + 1:
            raise ValueError(f"{path}: truncated sketch header")
        counts = [int(c) for c in rest[:s]]
        wp = int(rest[s])
        data = np.frombuffer(fh.read(), dtype=_F8)
    expected = wp * wp * sum(counts)
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    rows = []
    at = 0
    for c in counts:
        size = c * wp * wp
        rows.append(data[at : at + size].reshape(c, wp, wp).copy())
        at += size
    return Sketch(rows=tuple(rows), w_prime=wp)


def _format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, (tuple, list)):
        return " ".join(_format_value(x) for x in v)
    return str(v)


def write_csv(
    path: PathLike,
    fieldnames: Sequence[str],
    rows: Iterable[Mapping[str, object]],
    constants: Optional[Mapping[str, object]] = None,
) -> None:
    """Write a CSV table, prefixed with ``# key = value`` constant lines.

    Floats are serialized with repr() so a reload round-trips bit-exactly and
    reruns under the same seed diff clean.
    """
    with open(path, "w", newline="") as fh:
        if constants:
            for key, value in constants.items():
                fh.write(f"# {key} = {_format_value(value)}\n")
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_value(row[k]) for k in fieldnames})


def read_csv(path: PathLike) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Read a CSV written by write_csv; returns (constants, rows) as strings."""
    constants: dict[str, str] = {}
    with open(path, "r", newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    constants[key.strip()] = value.strip()
                continue
            lines.append(line)
    rows = list(csv.DictReader(lines))
    return constants, rows


def save_image_csv(path: PathLike, image: np.ndarray) -> None:
    """Inspection dump: one CSV row per image row, repr-formatted floats."""
    image = np.asarray(image, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in image:
            writer.writerow([repr(float(v)) for v in row])


def save_matrix_csv(path: PathLike, matrix: np.ndarray) -> None:
    """Row-major 0/1 dump of an explicit measurement matrix."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([int(v) for v in row])


RECOVERY_FIELDS = ("cluster", "cell", "valid", "errors", "erasures")


def recovery_rows(result: RecoveryResult) -> list[dict[str, object]]:
    return [
        {
            "cluster": d.cluster,
            "cell": -1 if d.cell is None else d.cell,
            "valid": int(d.valid),
            "errors": d.errors,
            "erasures": d.erasures,
        }
        for d in result.decoded
    ]


STAR_FIELDS = ("x", "y", "mass")


def star_rows(stars) -> list[dict[str, object]]:
    return [{"x": s.x, "y": s.y, "mass": s.mass} for s in stars]
