"""File formats: binary PGM masks, homography JSON, parameter archives and
small CSV tables.  Everything round-trips exactly at 8-bit mask precision."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .geometry import Homography

__all__ = [
    "IoError",
    "write_pgm",
    "read_pgm",
    "write_homography_json",
    "read_homography_json",
    "save_params",
    "load_params",
    "write_csv",
]


class IoError(ValueError):
    pass


def write_pgm(path, mask: np.ndarray):
    """Write a [0, 1] real mask as a binary (P5) PGM, maxval 255."""
    mask = np.asarray(mask, dtype=float)
    if mask.ndim != 2 or mask.min() < 0 or mask.max() > 1:
        raise IoError("mask must be a 2-d array with values in [0, 1]")
    data = np.round(mask * 255).astype(np.uint8)
    rows, cols = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM back into a [0, 1] real mask."""
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise IoError(f"{path}: not a binary PGM")
    cols, rows, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise IoError(f"{path}: 16-bit PGM not supported")
    data = np.frombuffer(raw[m.end() :], dtype=np.uint8, count=rows * cols)
    if data.size != rows * cols:
        raise IoError(f"{path}: truncated pixel data")
    return data.reshape(rows, cols).astype(float) / maxval


def write_homography_json(path, h: Homography, extra: dict | None = None):
    doc = {"matrix": [float(v) for v in h.to_flat()]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_homography_json(path) -> Homography:
    doc = json.loads(Path(path).read_text())
    try:
        return Homography.from_flat(doc["matrix"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IoError(f"{path}: invalid homography file: {exc}") from exc


def save_params(path, params: dict):
    np.savez(path, **params)


def load_params(path) -> dict:
    with np.load(path) as archive:
        return {k: archive[k].copy() for k in archive.files}


def write_csv(path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
