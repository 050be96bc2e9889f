"""
Discretised (phase x space) lattices and the probability grids that live on them.

The first grid dimension is always phase; the rest are spatial, in task units.
"""
import hashlib
import logging
import struct
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .exceptions import InvalidConfig, SpecMismatch

logger = logging.getLogger(__name__)

GRID_MAGIC = b'NFGD'
GRID_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    bounds: Tuple[Tuple[float, float], ...]
    cells: Tuple[int, ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        cells = tuple(int(c) for c in self.cells)
        if len(bounds) != len(cells):
            raise InvalidConfig(f"GridSpec has {len(bounds)} bounds but {len(cells)} cell counts")
        for lo, hi in bounds:
            if not lo < hi:
                raise InvalidConfig(f"GridSpec bound min {lo} must be below max {hi}")
        for count in cells:
            if count < 2:
                raise InvalidConfig(f"GridSpec needs at least 2 cells per dimension, got {count}")
        object.__setattr__(self, 'bounds', bounds)
        object.__setattr__(self, 'cells', cells)

    @classmethod
    def for_task(cls, phase_cells: int, spatial_bounds: Sequence[Tuple[float, float]],
                 spatial_cells: Sequence[int]) -> 'GridSpec':
        return cls(bounds=((0.0, 1.0),) + tuple(spatial_bounds),
                   cells=(phase_cells,) + tuple(spatial_cells))

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.bounds, self.cells)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def centers(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        width = (hi - lo) / self.cells[axis]
        return lo + (np.arange(self.cells[axis]) + 0.5) * width

    def cell_centers(self) -> np.ndarray:
        """All cell centers as an array of shape (*cells, ndim), row-major"""
        axes = [self.centers(axis) for axis in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack(mesh, axis=-1)

    def spatial(self) -> 'GridSpec':
        """The same lattice without its phase dimension"""
        return GridSpec(bounds=self.bounds[1:], cells=self.cells[1:])

    def index_of(self, points: np.ndarray) -> np.ndarray:
        """Cell index per point (last axis = ndim), clipped into the lattice"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lows = np.array([lo for lo, _ in self.bounds])
        idx = np.floor((points - lows) / self.widths).astype(int)
        return np.clip(idx, 0, np.array(self.cells) - 1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lows = np.array([lo for lo, _ in self.bounds])
        highs = np.array([hi for _, hi in self.bounds])
        return np.all((points >= lows) & (points <= highs), axis=-1)

    def header_bytes(self) -> bytes:
        parts = [struct.pack('<H', self.ndim)]
        for (lo, hi), count in zip(self.bounds, self.cells):
            parts.append(struct.pack('<Idd', count, lo, hi))
        return b''.join(parts)

    @classmethod
    def from_header(cls, payload: bytes, offset: int = 0) -> Tuple['GridSpec', int]:
        (ndim,) = struct.unpack_from('<H', payload, offset)
        offset += 2
        bounds, cells = [], []
        for _ in range(ndim):
            count, lo, hi = struct.unpack_from('<Idd', payload, offset)
            offset += struct.calcsize('<Idd')
            bounds.append((lo, hi))
            cells.append(count)
        return cls(bounds=tuple(bounds), cells=tuple(cells)), offset


def _check_same_spec(*grids) -> GridSpec:
    spec = grids[0].spec
    for other in grids[1:]:
        if other.spec != spec:
            raise SpecMismatch(f"Grid spec {other.spec.cells} does not match {spec.cells}")
    return spec


class GridDistribution:
    """Non-negative values per lattice cell; read-only once built"""

    def __init__(self, spec: GridSpec, values: np.ndarray, normalized: bool = False):
        values = np.array(values, dtype=float, copy=True).reshape(spec.shape)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidConfig("Grid values must be finite and non-negative")
        if normalized and abs(values.sum() - 1.0) > 1e-9:
            raise InvalidConfig(f"Grid marked normalized but sums to {values.sum()}")
        values.setflags(write=False)
        self.spec = spec
        self.values = values
        self.normalized = normalized

    @classmethod
    def from_values(cls, spec: GridSpec, values: np.ndarray) -> 'GridDistribution':
        """Build and normalize in one step"""
        values = np.asarray(values, dtype=float).reshape(spec.shape)
        total = values.sum()
        if not total > 0:
            raise InvalidConfig("Cannot normalize a grid with no probability mass")
        return cls(spec, values / total, normalized=True)

    @property
    def uniform_value(self) -> float:
        return 1.0 / self.spec.size

    def entropy(self) -> float:
        p = self.values[self.values > 0]
        return float(-np.sum(p * np.log(p)))

    def argmax(self) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(np.argmax(self.values), self.spec.shape))

    def digest(self) -> str:
        return hashlib.sha1(self.values.tobytes()).hexdigest()

    def to_bytes(self) -> bytes:
        header = GRID_MAGIC + struct.pack('<HB', GRID_FORMAT_VERSION, int(self.normalized))
        body = np.ascontiguousarray(self.values, dtype='<f8').tobytes()
        return header + self.spec.header_bytes() + body

    @classmethod
    def from_bytes(cls, payload: bytes) -> 'GridDistribution':
        if payload[:4] != GRID_MAGIC:
            raise InvalidConfig("Not a serialized grid distribution")
        version, normalized = struct.unpack_from('<HB', payload, 4)
        if version != GRID_FORMAT_VERSION:
            raise InvalidConfig(f"Unsupported grid format version {version}")
        spec, offset = GridSpec.from_header(payload, 7)
        values = np.frombuffer(payload, dtype='<f8', offset=offset, count=spec.size)
        return cls(spec, values.reshape(spec.shape), normalized=bool(normalized))

    def __repr__(self):
        return f"GridDistribution(cells={self.spec.cells}, normalized={self.normalized})"
