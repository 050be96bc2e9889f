from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in task units; closed, so touching counts as contact"""
    minimum: Tuple[float, ...]
    maximum: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'minimum', tuple(float(v) for v in self.minimum))
        object.__setattr__(self, 'maximum', tuple(float(v) for v in self.maximum))

    @classmethod
    def centered(cls, center: Sequence[float], size: Sequence[float]) -> 'Box':
        center, half = np.asarray(center, dtype=float), np.asarray(size, dtype=float) / 2
        return cls(tuple(center - half), tuple(center + half))

    @property
    def dim(self) -> int:
        return len(self.minimum)

    def inflated(self, margin: float) -> 'Box':
        return Box(tuple(v - margin for v in self.minimum), tuple(v + margin for v in self.maximum))

    def contains(self, point: Sequence[float]) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.minimum) and np.all(p <= self.maximum))

    def segment_hits(self, start: Sequence[float], end: Sequence[float]) -> bool:
        # Slab method, parametrised over t in [0, 1].
        p, d = np.asarray(start, dtype=float), np.asarray(end, dtype=float) - np.asarray(start, dtype=float)
        t_min, t_max = 0.0, 1.0
        for axis in range(self.dim):
            lo, hi = self.minimum[axis], self.maximum[axis]
            if d[axis] == 0.0:
                if p[axis] < lo or p[axis] > hi:
                    return False
                continue
            inv = 1.0 / d[axis]
            t0, t1 = (lo - p[axis]) * inv, (hi - p[axis]) * inv
            if inv < 0:
                t0, t1 = t1, t0
            t_min = max(t_min, t0)
            t_max = min(t_max, t1)
            if t_max < t_min:
                return False
        return True

    def to_dict(self) -> dict:
        return {'min': list(self.minimum), 'max': list(self.maximum)}

    @classmethod
    def from_dict(cls, data: dict) -> 'Box':
        return cls(tuple(data['min']), tuple(data['max']))


def first_collision(points: np.ndarray, boxes: Sequence[Box]) -> Optional[int]:
    """Index of the first polyline segment touching any box, or None"""
    points = np.atleast_2d(points)
    if points.shape[0] == 1:
        return 0 if any(box.contains(points[0]) for box in boxes) else None
    for index in range(points.shape[0] - 1):
        if any(box.segment_hits(points[index], points[index + 1]) for box in boxes):
            return index
    return None
