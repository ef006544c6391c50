"""Binary image/sketch layouts and constant-echoing CSV tables."""

import numpy as np
import pytest

from skyfold.io import (
    RECOVERY_FIELDS,
    STAR_FIELDS,
    load_image,
    load_sketch,
    read_csv,
    recovery_rows,
    save_image,
    save_image_csv,
    save_matrix_csv,
    save_sketch,
    star_rows,
    write_csv,
)
from skyfold.measurement import Sketch


def test_image_roundtrip(tmp_path):
    image = np.random.default_rng(0).uniform(-3, 7, size=(17, 17))
    path = tmp_path / "img.bin"
    save_image(path, image)
    assert np.array_equal(load_image(path), image)
    # 4-byte header + 17*17 float64
    assert path.stat().st_size == 4 + 17 * 17 * 8


def test_image_guards(tmp_path):
    with pytest.raises(ValueError, match="square"):
        save_image(tmp_path / "x.bin", np.zeros((3, 4)))
    short = tmp_path / "short.bin"
    short.write_bytes(b"\x02")
    with pytest.raises(ValueError, match="truncated"):
        load_image(short)
    bad = tmp_path / "bad.bin"
    save_image(bad, np.zeros((4, 4)))
    bad.write_bytes(bad.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected 16 pixels"):
        load_image(bad)


def test_sketch_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    rows = (rng.uniform(0, 1, (2, 4, 4)), rng.uniform(0, 1, (3, 4, 4)))
    sketch = Sketch(rows=rows, w_prime=4)
    path = tmp_path / "sk.bin"
    save_sketch(path, sketch)
    back = load_sketch(path)
    assert back.w_prime == 4 and back.bucket_counts == (2, 3)
    for a, b in zip(back.rows, rows):
        assert np.array_equal(a, b)
    assert np.array_equal(back.concat(), sketch.concat())


def test_sketch_truncation_errors(tmp_path):
    rows = (np.zeros((2, 4, 4)),)
    path = tmp_path / "sk.bin"
    save_sketch(path, Sketch(rows=rows, w_prime=4))
    blob = path.read_bytes()
    for cut in (2, 8, len(blob) - 16):
        clipped = tmp_path / f"cut{cut}.bin"
        clipped.write_bytes(blob[:cut])
        with pytest.raises(ValueError):
            load_sketch(clipped)


def test_write_csv_roundtrips_values(tmp_path):
    path = tmp_path / "t.csv"
    third = 1.0 / 3.0
    rows = [
        {"a": third, "b": np.float64(0.1), "c": np.int64(7)},
        {"a": -2.5, "b": 4, "c": "text"},
    ]
    write_csv(path, ("a", "b", "c"), rows, constants={"seed": 42, "pair": (26, 31)})
    constants, back = read_csv(path)
    assert constants == {"seed": "42", "pair": "26 31"}
    assert float(back[0]["a"]) == third  # repr round-trips bit-exactly
    assert float(back[0]["b"]) == 0.1
    assert back[0]["c"] == "7"
    assert back[1] == {"a": "-2.5", "b": "4", "c": "text"}


def test_write_csv_without_constants(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ("x",), [{"x": 1}])
    constants, rows = read_csv(path)
    assert constants == {} and rows == [{"x": "1"}]
    assert not path.read_text().startswith("#")


def test_save_image_csv(tmp_path):
    image = np.array([[1.5, 2.25], [0.1, -3.0]])
    path = tmp_path / "img.csv"
    save_image_csv(path, image)
    lines = path.read_text().strip().splitlines()
    parsed = np.array([[float(v) for v in line.split(",")] for line in lines])
    assert np.array_equal(parsed, image)


def test_save_matrix_csv(tmp_path):
    matrix = np.array([[1, 0, 1], [0, 1, 0]], dtype=np.uint8)
    path = tmp_path / "mat.csv"
    save_matrix_csv(path, matrix)
    assert path.read_text().strip().splitlines() == ["1,0,1", "0,1,0"]


def test_recovery_and_star_rows():
    class Decode:
        def __init__(self, cluster, cell, valid, errors, erasures):
            self.cluster = cluster
            self.cell = cell
            self.valid = valid
            self.errors = errors
            self.erasures = erasures

    class Result:
        decoded = (Decode(0, 37, True, 0, 1), Decode(1, None, False, 0, 4))

    rows = recovery_rows(Result())
    assert list(rows[0]) == list(RECOVERY_FIELDS)
    assert rows[0] == {"cluster": 0, "cell": 37, "valid": 1, "errors": 0, "erasures": 1}
    assert rows[1]["cell"] == -1 and rows[1]["valid"] == 0

    class Star:
        x, y, mass = 17.5, 413.5, 100.0

    srows = star_rows([Star()])
    assert list(srows[0]) == list(STAR_FIELDS)
    assert srows[0] == {"x": 17.5, "y": 413.5, "mass": 100.0}
