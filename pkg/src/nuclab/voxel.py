"""Voxel masks on axis-aligned grids in the closed half-space ``{x_d >= 0}``.

Binary layout (all integers int64, all reals float64, little-endian)::

    magic    8 bytes  b"NUCVOX01"
    d        int64
    shape    d x int64      cells per axis, axis order = array order
    origin   d x float64    lower corner of the box
    h        float64        cell spacing
    payload  ceil(prod(shape) / 8) bytes
             occupancy flattened in C (row-major) order, packed
             little-endian within each byte (bit k of byte j is cell 8j + k)

The JSON sidecar ``<file>.json`` repeats the header fields and adds the
occupied-cell count, the volume and the SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"NUCVOX01"


@dataclass(frozen=True, eq=False)
class VoxelMask:
    h: float
    origin: np.ndarray
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        origin = np.array(self.origin, dtype=float).reshape(-1)
        if origin.size != occ.ndim:
            raise ValidationError("origin length must equal the mask dimension")
        if not self.h > 0:
            raise ValidationError("grid spacing must be positive")
        if origin[-1] < 0:
            raise ValidationError("mask box must lie in the closed half-space x_d >= 0")
        occ.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "h", float(self.h))

    @property
    def d(self) -> int:
        return self.occupancy.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.occupancy.shape

    @property
    def n_occupied(self) -> int:
        return int(self.occupancy.sum())

    @property
    def volume(self) -> float:
        return self.n_occupied * self.h ** self.d

    @property
    def touches_floor(self) -> bool:
        return self.origin[-1] == 0.0

    def cell_centers(self) -> np.ndarray:
        axes = [self.origin[k] + self.h * (np.arange(n) + 0.5) for k, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        idx = np.floor((x - self.origin) / self.h).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1) & (x[:, -1] > 0)
        out = np.zeros(len(x), dtype=bool)
        if np.any(ok):
            out[ok] = self.occupancy[tuple(idx[ok].T)]
        return out

    def translated(self, shift) -> "VoxelMask":
        return VoxelMask(self.h, self.origin + np.asarray(shift, dtype=float), self.occupancy)

    # -- serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        header = MAGIC + struct.pack("<q", self.d)
        header += struct.pack(f"<{self.d}q", *self.shape)
        header += struct.pack(f"<{self.d}d", *self.origin.tolist())
        header += struct.pack("<d", self.h)
        payload = np.packbits(self.occupancy.ravel(order="C"), bitorder="little").tobytes()
        return header + payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "VoxelMask":
        if buf[:8] != MAGIC:
            raise ValidationError("not a voxel mask file (bad magic)")
        off = 8
        (d,) = struct.unpack_from("<q", buf, off)
        off += 8
        if not 1 <= d <= 8:
            raise ValidationError(f"unsupported dimension {d}")
        shape = struct.unpack_from(f"<{d}q", buf, off)
        if min(shape) < 0:
            raise ValidationError("negative mask shape")
        off += 8 * d
        origin = struct.unpack_from(f"<{d}d", buf, off)
        off += 8 * d
        (h,) = struct.unpack_from("<d", buf, off)
        off += 8
        n = int(np.prod(shape))
        nbytes = (n + 7) // 8
        if len(buf) - off != nbytes:
            raise ValidationError("payload length does not match header")
        bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=off), count=n, bitorder="little")
        return cls(h, np.array(origin), bits.astype(bool).reshape(shape))

    def sidecar(self) -> dict:
        payload = np.packbits(self.occupancy.ravel(order="C"), bitorder="little").tobytes()
        return {
            "format": "nuclab-voxelmask",
            "version": 1,
            "d": self.d,
            "shape": list(self.shape),
            "origin": self.origin.tolist(),
            "h": self.h,
            "occupied": self.n_occupied,
            "volume": self.volume,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }

    def save(self, path) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        Path(str(path) + ".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "VoxelMask":
        return cls.from_bytes(Path(path).read_bytes())


def exposed_faces(occ: np.ndarray, on_floor: bool = True) -> tuple[int, int]:
    """Count ``(interior, floor)`` faces of an occupancy array.

    ``interior`` counts occupied/unoccupied face pairs, treating everything
    outside the array as unoccupied; when ``on_floor`` the bottom plane of the
    box is the boundary hyperplane and its faces are excluded.  ``floor``
    counts the bottom faces of occupied cells in layer 0 (zero unless
    ``on_floor``).
    """
    occ = occ.astype(bool)
    d = occ.ndim
    interior = 0
    for k in range(d):
        pad = [(0, 0)] * d
        pad[k] = (1, 1)
        p = np.pad(occ, pad).astype(np.int8)
        jumps = np.abs(np.diff(p, axis=k))
        if k == d - 1 and on_floor:
            jumps = jumps[..., 1:]
        interior += int(jumps.sum())
    floor = int(occ[..., 0].sum()) if on_floor else 0
    return interior, floor


def grow_blob(rng, shape: tuple, start: tuple, n_cells: int) -> np.ndarray:
    """Random connected aggregate grown from ``start`` by adding face neighbours."""
    occ = np.zeros(shape, dtype=bool)
    occ[start] = True
    cells = [start]
    d = len(shape)
    while len(cells) < n_cells:
        base = cells[rng.integers(len(cells))]
        k = rng.integers(d)
        step = rng.choice([-1, 1])
        nb = list(base)
        nb[k] += step
        nb = tuple(nb)
        if all(0 <= nb[j] < shape[j] for j in range(d)) and not occ[nb]:
            occ[nb] = True
            cells.append(nb)
    return occ
