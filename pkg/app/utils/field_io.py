"""
On-disk formats.

SWE1 state dumps: magic ``SWE1``, nlon and nlat as little-endian uint32,
then 3*nlon*nlat little-endian float64 in u, v, h block order.

PGM field images: binary P5, one byte per cell, north at the top, linear
min-max scaling per field with min and max recorded in a comment line.

CSV tables use LF line endings and repr() floats so reruns are byte-identical.
"""

import csv
import logging
import os
import re
from pathlib import Path
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import FieldFormatError
from .swe_model import FIELDS, StateVector

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

SWE1_MAGIC = b'SWE1'
_HEADER = np.dtype([('magic', 'S4'), ('nlon', '<u4'), ('nlat', '<u4')])


def _ensure_parent(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = _ensure_parent(path)
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    return path


def dump_state(state: StateVector, path: PathLike) -> Path:
    path = _ensure_parent(path)
    header = np.array([(SWE1_MAGIC, state.nlon, state.nlat)], dtype=_HEADER)
    with open(path, 'wb') as fh:
        fh.write(header.tobytes())
        fh.write(state.data.astype('<f8').tobytes())
    return path


def load_state(path: PathLike) -> StateVector:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.itemsize:
        raise FieldFormatError(f"{path}: file too short for a SWE1 header")
    header = np.frombuffer(raw[:_HEADER.itemsize], dtype=_HEADER)[0]
    if header['magic'] != SWE1_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {bytes(header['magic'])!r}")
    nlon, nlat = int(header['nlon']), int(header['nlat'])
    if nlon == 0 or nlat == 0:
        raise FieldFormatError(f"{path}: empty grid {nlon}x{nlat}")
    expected = _HEADER.itemsize + 8 * 3 * nlon * nlat
    if len(raw) < expected:
        raise FieldFormatError(f"{path}: truncated, {len(raw)} of {expected} bytes")
    if len(raw) > expected:
        raise FieldFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw[_HEADER.itemsize:], dtype='<f8').astype(np.float64)
    return StateVector(data, nlon, nlat)


def field_to_pixels(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8), lo, hi
    scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8), lo, hi


def export_field_image(state: StateVector, field: str, path: PathLike) -> Path:
    if field not in FIELDS:
        raise FieldFormatError(f"unknown field {field!r}, expected one of {FIELDS}")
    pixels, lo, hi = field_to_pixels(state.field(field))
    pixels = pixels[::-1]  # row 0 of the image is the northernmost latitude
    header = f"P5\n# field={field} min={lo!r} max={hi!r}\n{state.nlon} {state.nlat}\n255\n"
    path = _ensure_parent(path)
    with open(path, 'wb') as fh:
        fh.write(header.encode('ascii'))
        fh.write(np.ascontiguousarray(pixels).tobytes())
    log.debug("wrote %s image %s (min=%g max=%g)", field, path, lo, hi)
    return path


_PGM_HEADER = re.compile(rb'P5\n(#[^\n]*\n)?(\d+) (\d+)\n255\n')


def load_pgm(path: PathLike) -> Tuple[np.ndarray, str]:
    """Pixels (as stored, north row first) and the comment line of a P5 image."""
    raw = Path(path).read_bytes()
    match = _PGM_HEADER.match(raw)
    if not match:
        raise FieldFormatError(f"{path}: not a P5 image written by export_field_image")
    width, height = int(match.group(2)), int(match.group(3))
    body = raw[match.end():]
    if len(body) != width * height:
        raise FieldFormatError(f"{path}: expected {width * height} pixels, got {len(body)}")
    comment = (match.group(1) or b'').decode('ascii').lstrip('# ').rstrip('\n')
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width), comment
