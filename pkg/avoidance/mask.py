"""
Consensus mask over spatial cells.

A cell traversed by more than ``threshold`` of the demonstrations is
protected (bit 0); feedback may only act on cells with bit 1. The mask
is spatial and is broadcast across every phase slice when applied.
"""
import logging
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .demonstrations import DemoSet, Label
from .exceptions import EmptySelection, InvalidConfig, SpecMismatch
from .grid import GridSpec
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

MASK_MAGIC = b'NFMK'
MASK_FORMAT_VERSION = 1
DEFAULT_CENTRAL_FRACTION = 1 / 6


@dataclass(frozen=True, eq=False)
class Mask:
    spec: GridSpec
    bits: np.ndarray
    threshold: float
    counts: np.ndarray
    n_demos: int

    def __post_init__(self):
        if self.bits.shape != self.spec.shape or self.counts.shape != self.spec.shape:
            raise SpecMismatch(f"Mask arrays do not match spec cells {self.spec.cells}")
        self.bits.setflags(write=False)
        self.counts.setflags(write=False)

    @classmethod
    def open(cls, spec: GridSpec) -> 'Mask':
        """Mask that protects nothing"""
        return cls(spec=spec, bits=np.ones(spec.shape, dtype=np.uint8), threshold=1.0,
                   counts=np.zeros(spec.shape, dtype=np.int64), n_demos=0)

    def broadcast(self, policy_spec: GridSpec) -> np.ndarray:
        """Bits expanded over the phase axis of ``policy_spec``"""
        if policy_spec.spatial() != self.spec:
            raise SpecMismatch(f"Mask cells {self.spec.cells} do not match policy cells {policy_spec.cells}")
        return np.broadcast_to(self.bits, policy_spec.shape).astype(float)

    def bit_at(self, positions: np.ndarray) -> np.ndarray:
        idx = self.spec.index_of(positions)
        return self.bits[tuple(idx.T)]

    @property
    def protected_cells(self) -> int:
        return int(np.count_nonzero(self.bits == 0))

    def to_text(self) -> str:
        """0/1 grid; rows run top to bottom in the second spatial axis for 2D masks"""
        if self.spec.ndim == 2:
            rows = self.bits.T[::-1]
            return '\n'.join(' '.join(str(int(b)) for b in row) for row in rows) + '\n'
        blocks = []
        for layer in range(self.bits.shape[-1]):
            rows = self.bits[..., layer].T[::-1]
            blocks.append(f"# layer {layer}\n" + '\n'.join(' '.join(str(int(b)) for b in row) for row in rows))
        return '\n'.join(blocks) + '\n'

    def to_bytes(self) -> bytes:
        header = MASK_MAGIC + struct.pack('<H', MASK_FORMAT_VERSION) + self.spec.header_bytes()
        return header + np.packbits(self.bits.ravel()).tobytes()

    @staticmethod
    def nbytes_for(spec: GridSpec) -> int:
        return len(MASK_MAGIC) + 2 + len(spec.header_bytes()) + math.ceil(spec.size / 8)


def traversed_cells(polyline: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Flat indices of every cell the polyline passes through"""
    polyline = np.atleast_2d(np.asarray(polyline, dtype=float))
    step = 0.5 * float(np.min(spec.widths))
    pieces = [polyline[:1]]
    for start, end in zip(polyline[:-1], polyline[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(end - start) / step)))
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        pieces.append(start + t * (end - start))
    points = np.vstack(pieces)
    inside = spec.contains(points)
    idx = spec.index_of(points[inside])
    if idx.size == 0:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.ravel_multi_index(tuple(idx.T), spec.shape))


def build_mask(demos: DemoSet, spec: GridSpec, threshold: float) -> Mask:
    """Count the demos through each spatial cell; cells with count > threshold * N get bit 0"""
    if not 0 < threshold <= 1:
        raise InvalidConfig(f"Mask threshold must be in (0, 1], got {threshold}")
    positives = [demo for demo in demos if demo.label is Label.POSITIVE]
    if not positives:
        raise InvalidConfig("build_mask needs at least one positive demonstration")

    counts = np.zeros(spec.size, dtype=np.int64)
    for demo in positives:
        counts[traversed_cells(demo.positions, spec)] += 1
    counts = counts.reshape(spec.shape)
    bits = np.where(counts > threshold * len(positives), 0, 1).astype(np.uint8)

    mask = Mask(spec=spec, bits=bits, threshold=float(threshold), counts=counts, n_demos=len(positives))
    logger.info(f"Built mask from {len(positives)} demos: {mask.protected_cells}/{spec.size} cells protected")
    return mask


def central_trajectory_selector(traj: Trajectory, discard_fraction: float = DEFAULT_CENTRAL_FRACTION) -> Trajectory:
    if not 0 <= discard_fraction < 0.5:
        raise InvalidConfig(f"discard_fraction must be in [0, 0.5), got {discard_fraction}")
    # Rounded first so that 60 * (1/6) cuts exactly 10.
    cut = int(math.ceil(round(discard_fraction * len(traj), 9)))
    if len(traj) - 2 * cut <= 0:
        raise EmptySelection(f"Discarding {cut} points from each end of a {len(traj)}-point trajectory leaves nothing")
    return traj.subset(cut, len(traj) - cut)


def mask_selector(traj: Trajectory, mask: Mask,
                  fallback_fraction: float = DEFAULT_CENTRAL_FRACTION) -> Trajectory:
    """Failure points lying in unprotected cells, else the central part of the failure"""
    keep = mask.bit_at(traj.positions) == 1
    if not np.any(keep):
        logger.warning("No failure points in unprotected cells, falling back to central selection")
        return central_trajectory_selector(traj, fallback_fraction)
    return Trajectory(points=traj.points[keep], source=traj.source, outcome=traj.outcome)


def select_region(traj: Trajectory, selector: str, mask: Optional[Mask] = None,
                  central_fraction: float = DEFAULT_CENTRAL_FRACTION) -> Trajectory:
    if selector == 'mask':
        if mask is None:
            raise InvalidConfig("The mask selector needs a mask")
        return mask_selector(traj, mask)
    if selector == 'central':
        return central_trajectory_selector(traj, central_fraction)
    if selector == 'none':
        return traj
    raise InvalidConfig(f"Unknown selector: {selector}")

