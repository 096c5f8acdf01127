"""Bit-exact binary state snapshots.

Format: one ASCII header line

    MMPS 1 <nx> <ny> <mode> <t-as-hex-float>\n

followed by the six field arrays ``ux, uy, w, bx, by, p`` as raw
little-endian 64-bit floats in row-major order, then the 64-bit FNV-1a
checksum of that payload (little-endian).  Write followed by read restores
the state bit for bit; any payload corruption is caught by the checksum.
"""

from __future__ import annotations

import os

import numpy as np

from .fields import CELL, MAC, MODES, NODE, GridSpec, ScalarField, State, VectorField

__all__ = [
    "SnapshotError",
    "SnapshotFormatError",
    "SnapshotChecksumError",
    "SnapshotTruncatedError",
    "write_snapshot",
    "read_snapshot",
]

_MAGIC = "MMPS"
_VERSION = "1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x00000100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class SnapshotError(ValueError):
    """Base class for snapshot format problems."""


class SnapshotFormatError(SnapshotError):
    """Header is not a valid snapshot header (magic/version/shape)."""


class SnapshotChecksumError(SnapshotError):
    """Payload bytes do not match the stored checksum."""


class SnapshotTruncatedError(SnapshotError):
    """File ends before the declared payload and checksum."""


def _fnv1a(payload: bytes) -> int:
    acc = _FNV_OFFSET
    for byte in payload:
        acc = ((acc ^ byte) * _FNV_PRIME) & _MASK
    return acc


def _field_arrays(state: State) -> tuple[np.ndarray, ...]:
    return (state.u.ux, state.u.uy, state.w.data, state.b.ux, state.b.uy, state.p.data)


def write_snapshot(state: State, path: str | os.PathLike) -> None:
    """Serialize a state; overwrites ``path``."""
    g = state.grid
    header = f"{_MAGIC} {_VERSION} {g.nx} {g.ny} {g.mode} {float(state.t).hex()}\n"
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in _field_arrays(state)
    )
    checksum = _fnv1a(payload)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)
        fh.write(checksum.to_bytes(8, "little"))


def read_snapshot(path: str | os.PathLike) -> State:
    """Deserialize a state, verifying shape and checksum."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise SnapshotFormatError(f"{path}: missing header line")
    try:
        header = raw[: newline].decode("ascii")
    except UnicodeDecodeError as exc:
        raise SnapshotFormatError(f"{path}: header is not ASCII") from exc
    parts = header.split(" ")
    if len(parts) != 6 or parts[0] != _MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic/header {header!r}")
    if parts[1] != _VERSION:
        raise SnapshotFormatError(f"{path}: unsupported version {parts[1]!r}")
    try:
        nx, ny = int(parts[2]), int(parts[3])
        mode = parts[4]
        t = float.fromhex(parts[5])
    except ValueError as exc:
        raise SnapshotFormatError(f"{path}: malformed header fields") from exc
    if mode not in MODES:
        raise SnapshotFormatError(f"{path}: unknown grid mode {mode!r}")
    grid = GridSpec(nx, ny, mode)

    shapes = (
        grid.lattice_shape("xface"),
        grid.lattice_shape("yface"),
        grid.lattice_shape("node"),
        grid.lattice_shape("xface"),
        grid.lattice_shape("yface"),
        grid.lattice_shape("cell"),
    )
    payload_len = sum(8 * s[0] * s[1] for s in shapes)
    body = raw[newline + 1 :]
    if len(body) < payload_len + 8:
        raise SnapshotTruncatedError(
            f"{path}: payload needs {payload_len + 8} bytes after the header, "
            f"found {len(body)}"
        )
    payload = body[:payload_len]
    stored = int.from_bytes(body[payload_len : payload_len + 8], "little")
    actual = _fnv1a(payload)
    if stored != actual:
        raise SnapshotChecksumError(
            f"{path}: checksum mismatch (stored {stored:#018x}, computed {actual:#018x})"
        )

    arrays = []
    offset = 0
    for shape in shapes:
        size = 8 * shape[0] * shape[1]
        arrays.append(
            np.frombuffer(payload[offset : offset + size], dtype="<f8")
            .reshape(shape)
            .copy()
        )
        offset += size
    ux, uy, w, bx, by, p = arrays
    return State(
        t=t,
        u=VectorField(grid, MAC, ux, uy),
        w=ScalarField(grid, NODE, w),
        b=VectorField(grid, MAC, bx, by),
        p=ScalarField(grid, CELL, p),
    )
