"""
Demonstrations and demonstration sets, with their text and binary file formats.

Text format (JSON Lines, one trajectory per line):

    {"label": "positive", "weight": 1.0, "behavior": "over",
     "samples": [[phase, x, y], [phase, x, y], ...]}

Binary format (used for memory accounting): magic b'NFDS', u16 version,
u32 demo count, u16 spatial dim, then per demo u8 label, f64 weight,
u32 sample count and the float64 samples row-major.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np

from .exceptions import InvalidDemonstration

logger = logging.getLogger(__name__)

DATASET_MAGIC = b'NFDS'
DATASET_FORMAT_VERSION = 1
PHASE_TOLERANCE = 1e-12


class Label(str, Enum):
    POSITIVE = 'positive'
    NEGATIVE = 'negative'


@dataclass(frozen=True, eq=False)
class Demonstration:
    """Phase-indexed positions; column 0 is phase, the rest is position"""
    samples: np.ndarray
    label: Label = Label.POSITIVE
    weight: float = 1.0
    behavior: Optional[str] = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float, copy=True)
        if samples.ndim != 2 or samples.shape[1] not in (3, 4):
            raise InvalidDemonstration(f"Samples must be (n, 1 + dim) with dim 2 or 3, got {samples.shape}")
        if samples.shape[0] < 2:
            raise InvalidDemonstration("A demonstration needs at least two samples")
        label = Label(self.label)
        phases = samples[:, 0]
        if np.any(np.diff(phases) <= 0):
            raise InvalidDemonstration("Demonstration phases must be strictly increasing")
        if phases[0] < -PHASE_TOLERANCE or phases[-1] > 1 + PHASE_TOLERANCE:
            raise InvalidDemonstration("Demonstration phases must lie in [0, 1]")
        # Negative demonstrations may be a selected sub-interval of a rollout.
        if label is Label.POSITIVE and (abs(phases[0]) > PHASE_TOLERANCE or abs(phases[-1] - 1) > PHASE_TOLERANCE):
            raise InvalidDemonstration("Positive demonstrations must start at phase 0 and end at phase 1")
        if self.weight < 0 and label is not Label.NEGATIVE:
            raise InvalidDemonstration("Only negative demonstrations may carry a negative weight")
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'label', label)
        object.__setattr__(self, 'weight', float(self.weight))

    @property
    def dim(self) -> int:
        return self.samples.shape[1] - 1

    @property
    def phases(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.samples[:, 1:]

    def to_record(self) -> dict:
        return {
            'label': self.label.value,
            'weight': self.weight,
            'behavior': self.behavior,
            'samples': self.samples.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> 'Demonstration':
        try:
            return cls(samples=np.array(record['samples'], dtype=float),
                       label=Label(record.get('label', 'positive')),
                       weight=float(record.get('weight', 1.0)),
                       behavior=record.get('behavior'))
        except KeyError as e:
            raise InvalidDemonstration(f"Demonstration record is missing field {e}") from e


@dataclass(frozen=True)
class DemoSet:
    demos: Tuple[Demonstration, ...] = field(default_factory=tuple)

    def __post_init__(self):
        demos = tuple(self.demos)
        dims = {demo.dim for demo in demos}
        if len(dims) > 1:
            raise InvalidDemonstration(f"Demonstrations mix spatial dimensions {sorted(dims)}")
        object.__setattr__(self, 'demos', demos)

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self) -> Iterator[Demonstration]:
        return iter(self.demos)

    def __getitem__(self, index) -> Demonstration:
        return self.demos[index]

    @property
    def dim(self) -> Optional[int]:
        return self.demos[0].dim if self.demos else None

    def positives(self) -> 'DemoSet':
        return DemoSet(tuple(d for d in self.demos if d.label is Label.POSITIVE))

    def negatives(self) -> 'DemoSet':
        return DemoSet(tuple(d for d in self.demos if d.label is Label.NEGATIVE))

    def with_added(self, *demos: Demonstration) -> 'DemoSet':
        return DemoSet(self.demos + tuple(demos))

    def stack(self) -> Tuple[np.ndarray, np.ndarray]:
        """All samples as one (n, 1 + dim) array plus the per-sample weights"""
        if not self.demos:
            raise InvalidDemonstration("Cannot stack an empty demonstration set")
        samples = np.vstack([demo.samples for demo in self.demos])
        weights = np.concatenate([np.full(demo.samples.shape[0], demo.weight) for demo in self.demos])
        return samples, weights

    def to_bytes(self) -> bytes:
        parts = [DATASET_MAGIC, struct.pack('<HIH', DATASET_FORMAT_VERSION, len(self.demos), self.dim or 0)]
        for demo in self.demos:
            parts.append(struct.pack('<BdI', demo.label is Label.NEGATIVE, demo.weight, demo.samples.shape[0]))
            parts.append(np.ascontiguousarray(demo.samples, dtype='<f8').tobytes())
        return b''.join(parts)

    @classmethod
    def from_bytes(cls, payload: bytes) -> 'DemoSet':
        if payload[:4] != DATASET_MAGIC:
            raise InvalidDemonstration("Not a serialized demonstration set")
        version, count, dim = struct.unpack_from('<HIH', payload, 4)
        if version != DATASET_FORMAT_VERSION:
            raise InvalidDemonstration(f"Unsupported dataset format version {version}")
        offset = 4 + struct.calcsize('<HIH')
        demos: List[Demonstration] = []
        for _ in range(count):
            negative, weight, n = struct.unpack_from('<BdI', payload, offset)
            offset += struct.calcsize('<BdI')
            samples = np.frombuffer(payload, dtype='<f8', offset=offset, count=n * (dim + 1))
            offset += samples.nbytes
            demos.append(Demonstration(samples=samples.reshape(n, dim + 1),
                                       label=Label.NEGATIVE if negative else Label.POSITIVE,
                                       weight=weight))
        return cls(tuple(demos))


def save_demos(demos: Iterable[Demonstration], path: Union[str, Path]) -> int:
    """Write demonstrations as JSON Lines; returns the number written"""
    count = 0
    with open(path, 'w') as f:
        for demo in demos:
            f.write(json.dumps(demo.to_record()) + '\n')
            count += 1
    logger.info(f"Saved {count} demonstrations to {path}")
    return count


def load_demos(path: Union[str, Path]) -> DemoSet:
    demos = []
    with open(path, 'r') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidDemonstration(f"{path}:{line_number} is not valid JSON: {e}") from e
            demos.append(Demonstration.from_record(record))
    logger.info(f"Loaded {len(demos)} demonstrations from {path}")
    return DemoSet(tuple(demos))
