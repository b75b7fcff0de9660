# CQF1 field file, all little-endian:
#
#    magic     8 bytes   b"CQNLSFD1"
#    sizes     3 x u64   n1, n2, n3
#    extents   3 x f64   L1, L2, L3
#    params    6 x f64   omega, k, mu, m, l, rho
#    values    n1*n2*n3 complex128, C order (x3 fastest)
#    crc       u64       CRC-64 of everything between the magic and the crc

from __future__ import annotations

import logging
import math
import struct
from collections.abc import Iterable, Mapping
from enum import Enum
from pathlib import Path
from typing import Any

import crcmod.predefined
import numpy as np
import pandas as pd
from dotenv import dotenv_values

from cqnls.errors import FieldFileError, GridMismatchError, NonFiniteFieldError
from cqnls.grid import Field, GridSpec, ProblemParams

logger = logging.getLogger(__name__)

MAGIC = b"CQNLSFD1"
FIELD_SUFFIX = ".cqf"
_HEADER = struct.Struct("<3Q3d6d")
_CRC = struct.Struct("<Q")
_crc64 = crcmod.predefined.mkCrcFun("crc-64")


def _payload(u: Field, p: ProblemParams) -> bytes:
    grid = u.grid
    header = _HEADER.pack(*grid.shape, *grid.half_widths, *p.as_tuple())
    return header + np.ascontiguousarray(u.values, dtype="<c16").tobytes()


def encode_field(u: Field, p: ProblemParams) -> bytes:
    payload = _payload(u, p)
    return MAGIC + payload + _CRC.pack(_crc64(payload))


def decode_field(blob: bytes, source: str = "<bytes>") -> tuple[Field, ProblemParams]:
    if blob[: len(MAGIC)] != MAGIC:
        raise FieldFileError("bad magic", path=source)
    if len(blob) < len(MAGIC) + _HEADER.size + _CRC.size:
        raise FieldFileError("truncated header", path=source, size=len(blob))

    header = _HEADER.unpack_from(blob, len(MAGIC))
    n1, n2, n3 = header[:3]
    expected = len(MAGIC) + _HEADER.size + 16 * n1 * n2 * n3 + _CRC.size
    if len(blob) != expected:
        raise FieldFileError("truncated or oversized file", path=source, size=len(blob), expected=expected)

    payload = blob[len(MAGIC) : -_CRC.size]
    (stored,) = _CRC.unpack(blob[-_CRC.size :])
    if _crc64(payload) != stored:
        raise FieldFileError("CRC mismatch", path=source)

    try:
        grid = GridSpec(n1, n2, n3, *header[3:6])
        params = ProblemParams(*header[6:12])
        values = np.frombuffer(payload, dtype="<c16", offset=_HEADER.size).reshape(grid.shape)
        return Field(grid, values), params
    except (ValueError, GridMismatchError, NonFiniteFieldError) as error:
        raise FieldFileError(f"invalid contents: {error}", path=source) from error


def write_field(path: str | Path, u: Field, p: ProblemParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_field(u, p))
    logger.debug("wrote %s (%s)", path, "x".join(map(str, u.grid.shape)))
    return path


def read_field(path: str | Path) -> tuple[Field, ProblemParams]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as error:
        raise FieldFileError(f"cannot read field file: {error}", path=str(path)) from error
    return decode_field(blob, source=str(path))


def write_snapshots(directory: str | Path, snapshots: Iterable[tuple[float, Field]], p: ProblemParams) -> list[Path]:
    directory = Path(directory)
    paths = []
    for index, (t, u) in enumerate(snapshots, start=1):
        paths.append(write_field(directory / f"snapshot_{index:04d}{FIELD_SUFFIX}", u, p))
        logger.debug("snapshot %d at t=%.6g", index, t)
    return paths


def format_value(value: Any) -> str:
    # Floats round-trip through %.17g; booleans and enums as lowercase words.
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.17g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    text = str(value)
    if "\n" in text:
        raise ValueError(f"record values must be single-line, got {text!r}")
    return text


def write_record(path: str | Path, record: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={format_value(value)}" for key, value in record.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_record(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return {key: value or "" for key, value in dotenv_values(path).items()}


def write_csv(path: str | Path, rows: list[dict[str, Any]], columns: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


def read_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)
