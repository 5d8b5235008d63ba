"""ANF1 field files and trajectory checkpoints.

Record layout (little-endian):

    offset  0  4s   magic b"ANF1"
    offset  4  3u4  n1 n2 n3
    offset 16  3f8  L1 L2 L3
    offset 40  u4   component count
    offset 44       zero padding up to 64 bytes
    offset 64       samples, f8, component by component, each in x3-major /
                    x1-minor order (x1 varies fastest)

A checkpoint is a plain concatenation of records plus a CSV sidecar.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .exceptions import DimensionError
from .spectral import Grid, VelocityField, forward_transform

MAGIC = b"ANF1"
HEADER = struct.Struct("<4s3I3dI")
HEADER_SIZE = 64


def encode_record(grid: Grid, components) -> bytes:
    comps = [np.asarray(c, dtype=np.float64) for c in components]
    for c in comps:
        if c.shape != grid.shape:
            raise DimensionError(f"component shape {c.shape} does not match grid {grid.shape}")
    head = HEADER.pack(MAGIC, grid.n1, grid.n2, grid.n3, grid.L1, grid.L2, grid.L3, len(comps))
    head += b"\0" * (HEADER_SIZE - len(head))
    body = b"".join(np.ascontiguousarray(c.transpose(2, 1, 0)).astype("<f8").tobytes() for c in comps)
    return head + body


def decode_record(buf: bytes, offset: int = 0):
    """Return ``(grid, components, next_offset)``."""
    if len(buf) - offset < HEADER_SIZE:
        raise ValueError("truncated ANF1 header")
    magic, n1, n2, n3, L1, L2, L3, ncomp = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    grid = Grid(n1, n2, n3, L1, L2, L3)
    count = n1 * n2 * n3
    pos = offset + HEADER_SIZE
    comps = []
    for _ in range(ncomp):
        raw = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
        comps.append(raw.reshape(n3, n2, n1).transpose(2, 1, 0).astype(np.float64))
        pos += 8 * count
    return grid, comps, pos


def write_anf1(path, grid: Grid, components) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_record(grid, components))
    return path


def read_anf1(path):
    grid, comps, _ = decode_record(Path(path).read_bytes())
    return grid, comps


def write_field(path, field) -> Path:
    """Write a SpectralField or VelocityField as physical samples."""
    if isinstance(field, VelocityField):
        comps = list(field.to_physical())
    else:
        comps = [field.to_physical()]
    return write_anf1(path, field.grid, comps)


def read_field(path, divfree: bool | None = None):
    """Read a one-component file as SpectralField, a three-component file as VelocityField."""
    grid, comps = read_anf1(path)
    return _as_field(grid, comps, divfree)


def _as_field(grid, comps, divfree):
    if len(comps) == 1:
        return forward_transform(comps[0], grid)
    if len(comps) == 3:
        u = VelocityField.from_physical(grid, comps)
        if divfree is None:
            divfree = u.divergence_residual() <= VelocityField.DIVFREE_TOL
        return u.with_divfree(divfree) if divfree else u
    raise DimensionError(f"unsupported component count {len(comps)}")


def write_checkpoint(stem, trajectory) -> tuple[Path, Path]:
    """Write ``<stem>.anf1s`` (one record per sample) and ``<stem>.csv``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data_path = stem.with_suffix(".anf1s")
    index_path = stem.with_suffix(".csv")
    with data_path.open("wb") as fh:
        for u in trajectory.fields:
            fh.write(encode_record(u.grid, list(u.to_physical())))
    energy = trajectory.sample_energy()
    dissipation = trajectory.sample_dissipation()
    with index_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "t", "energy", "dissipation"])
        for i, t in enumerate(trajectory.times):
            w.writerow([i, repr(float(t)), repr(float(energy[i])), repr(float(dissipation[i]))])
    return data_path, index_path


def read_checkpoint(stem):
    """Return ``(times, fields)`` from a checkpoint written by :func:`write_checkpoint`."""
    stem = Path(stem)
    buf = stem.with_suffix(".anf1s").read_bytes()
    with stem.with_suffix(".csv").open() as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["t"]) for r in rows])
    fields = []
    offset = 0
    while offset < len(buf):
        grid, comps, offset = decode_record(buf, offset)
        fields.append(_as_field(grid, comps, None))
    if len(fields) != len(times):
        raise ValueError("checkpoint index and data disagree on the sample count")
    return times, fields

