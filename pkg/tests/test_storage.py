from __future__ import annotations

import math
from enum import Enum

import numpy as np
import pytest

from cqnls.errors import FieldFileError
from cqnls.grid import ProblemParams
from cqnls.storage import (
    MAGIC,
    decode_field,
    encode_field,
    format_value,
    read_csv,
    read_field,
    read_record,
    write_csv,
    write_field,
    write_record,
    write_snapshots,
)

PARAMS = ProblemParams(omega=1.2e-5, k=4.0, mu=0.08, m=31.5, l=0.0, rho=8.0)


class Flavour(str, Enum):
    SWEET = "sweet"


def test_field_file_is_bit_exact(tmp_path, smooth_field):
    path = write_field(tmp_path / "nested" / "u.cqf", smooth_field, PARAMS)
    field, params = read_field(path)
    assert field.grid == smooth_field.grid
    assert np.array_equal(field.values.view(np.uint8), smooth_field.values.view(np.uint8))
    assert params == PARAMS
    assert path.read_bytes().startswith(MAGIC)


def test_field_file_rejects_bad_magic(smooth_field):
    blob = encode_field(smooth_field, PARAMS)
    with pytest.raises(FieldFileError, match="bad magic"):
        decode_field(b"NOTAFILE" + blob[8:])


def test_field_file_rejects_truncation(smooth_field):
    blob = encode_field(smooth_field, PARAMS)
    for cut in (20, len(blob) - 1):
        with pytest.raises(FieldFileError):
            decode_field(blob[:cut])
    with pytest.raises(FieldFileError):
        decode_field(blob + b"\0")


def test_field_file_detects_corruption(smooth_field):
    blob = bytearray(encode_field(smooth_field, PARAMS))
    blob[len(blob) // 2] ^= 0x01
    with pytest.raises(FieldFileError, match="CRC"):
        decode_field(bytes(blob))


def test_missing_field_file(tmp_path):
    with pytest.raises(FieldFileError):
        read_field(tmp_path / "absent.cqf")


def test_snapshots_are_numbered(tmp_path, smooth_field):
    paths = write_snapshots(tmp_path, [(0.1, smooth_field), (0.2, smooth_field)], PARAMS)
    assert [path.name for path in paths] == ["snapshot_0001.cqf", "snapshot_0002.cqf"]


@pytest.mark.parametrize(
    ("value", "text"),
    [(True, "true"), (False, "false"), (3, "3"), (0.1, "0.10000000000000001"), (math.nan, "nan"), (Flavour.SWEET, "sweet")],
)
def test_format_value(value, text):
    assert format_value(value) == text


def test_format_value_rejects_multiline():
    with pytest.raises(ValueError):
        format_value("two\nlines")


def test_record_round_trips_floats(tmp_path):
    values = {"E1": 1.0 / 3.0, "E2": -2.5e-17, "omega": 1.2e-5, "label": "global_min"}
    path = write_record(tmp_path / "summary.txt", values)
    record = read_record(path)
    assert list(record) == list(values)
    for key in ("E1", "E2", "omega"):
        assert float(record[key]) == values[key]
    assert record["label"] == "global_min"


def test_missing_record(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_record(tmp_path / "absent.txt")


def test_csv_layout(tmp_path):
    rows = [{"t": 0.0, "energy": 0.1}, {"t": 0.5, "energy": 1.0 / 3.0}]
    path = write_csv(tmp_path / "path.csv", rows, ["t", "energy"])
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0] == b"t,energy"
    frame = read_csv(path)
    assert list(frame.columns) == ["t", "energy"]
    assert frame["energy"].iloc[1] == pytest.approx(1.0 / 3.0, rel=1e-15)
