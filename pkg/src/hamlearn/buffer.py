"""Fixed-capacity replay store for solver-generated samples.

Samples are kept in a flat float64 ring (oldest evicted first once the
capacity is reached) and drawn uniformly at random with replacement to
break temporal correlation.  Contents survive a save/load round trip
bit-exactly.  Single writer, and batch draws copy data out, so training
never aliases buffer memory.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .systems import Array, InputError

log = logging.getLogger(__name__)

_MAGIC = "hamlearn-buffer"
_VERSION = 1


@dataclass(frozen=True)
class Sample:
    """One demonstration tuple recorded at a rollout step.

    ``u_mpc`` carries the demonstrator's control so that behavioral-cloning
    style losses can train from the same buffer as Hamiltonian losses.
    """

    t: float
    phase: Array
    x: Array
    dvdx: Array
    nu: Array
    u_mpc: Array

    def flat(self) -> Array:
        return np.concatenate(
            [[self.t], self.phase, self.x, self.dvdx, self.nu, self.u_mpc]
        )


@dataclass
class Batch:
    """Struct-of-arrays view of drawn samples."""

    t: Array
    phase: Array
    x: Array
    dvdx: Array
    nu: Array
    u_mpc: Array

    def __len__(self) -> int:
        return len(self.t)


class ReplayBuffer:
    def __init__(self, capacity: int, phase_dim: int, state_dim: int, nu_dim: int, control_dim: int):
        if capacity <= 0:
            raise InputError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.dims = {
            "phase": int(phase_dim),
            "x": int(state_dim),
            "dvdx": int(state_dim),
            "nu": int(nu_dim),
            "u_mpc": int(control_dim),
        }
        self.row_width = 1 + sum(self.dims.values())
        self._data = np.zeros((self.capacity, self.row_width))
        self._size = 0
        self._next = 0
        self.insert_count = 0
        self.rejected_count = 0
        off = 1
        self._slices: dict[str, slice] = {}
        for name, d in self.dims.items():
            self._slices[name] = slice(off, off + d)
            off += d

    def __len__(self) -> int:
        return self._size

    def append(self, sample: Sample) -> bool:
        """Store a sample; non-finite samples are dropped with a warning."""
        row = sample.flat()
        if row.shape != (self.row_width,):
            raise InputError(
                f"sample width {row.shape[0]} does not match buffer layout {self.row_width}"
            )
        if not np.all(np.isfinite(row)):
            self.rejected_count += 1
            log.warning("rejected non-finite sample (%d so far)", self.rejected_count)
            return False
        self._data[self._next] = row
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.insert_count += 1
        return True

    def _rows_to_batch(self, rows: Array) -> Batch:
        return Batch(
            t=rows[:, 0].copy(),
            **{name: rows[:, sl].copy() for name, sl in self._slices.items()},
        )

    def draw_batch(self, n: int, rng: np.random.Generator) -> list[Sample]:
        """Uniform draw with replacement; raises on an empty buffer."""
        batch = self.draw_batch_arrays(n, rng)
        return [
            Sample(
                t=float(batch.t[i]),
                phase=batch.phase[i],
                x=batch.x[i],
                dvdx=batch.dvdx[i],
                nu=batch.nu[i],
                u_mpc=batch.u_mpc[i],
            )
            for i in range(n)
        ]

    def draw_batch_arrays(self, n: int, rng: np.random.Generator) -> Batch:
        if self._size == 0:
            raise InputError("no demonstrations yet")
        idx = rng.integers(0, self._size, size=n)
        return self._rows_to_batch(self._data[idx])

    def ordered_rows(self) -> Array:
        """Samples oldest-first (copy)."""
        if self._size < self.capacity:
            return self._data[: self._size].copy()
        return np.concatenate([self._data[self._next :], self._data[: self._next]])

    def save(self, path: str) -> None:
        header = {
            "magic": _MAGIC,
            "version": _VERSION,
            "capacity": self.capacity,
            "count": self._size,
            "insert_count": self.insert_count,
            "dims": self.dims,
        }
        rows = self.ordered_rows()
        with open(path, "wb") as f:
            f.write(json.dumps(header).encode("utf-8"))
            f.write(b"\n")
            f.write(rows.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "ReplayBuffer":
        with open(path, "rb") as f:
            header_line = f.readline()
            blob = f.read()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise InputError(f"corrupted buffer header in {path}") from err
        if header.get("magic") != _MAGIC or header.get("version") != _VERSION:
            raise InputError(f"unsupported buffer format in {path}")
        dims = header["dims"]
        buf = cls(
            header["capacity"],
            dims["phase"],
            dims["x"],
            dims["nu"],
            dims["u_mpc"],
        )
        count = int(header["count"])
        rows = np.frombuffer(blob, dtype="<f8").reshape(count, buf.row_width)
        buf._data[:count] = rows
        buf._size = count
        buf._next = count % buf.capacity
        buf.insert_count = int(header["insert_count"])
        return buf
