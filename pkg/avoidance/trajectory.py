import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Union

import numpy as np
import pandas as pd

from .demonstrations import Demonstration
from .exceptions import InvalidConfig

logger = logging.getLogger(__name__)


class OutcomeKind(str, Enum):
    SUCCESS = 'Success'
    COLLISION = 'Collision'
    GOAL_MISS = 'GoalMiss'
    UNEVALUATED = 'Unevaluated'


class TrajectorySource(str, Enum):
    DEMO = 'demo'
    ROLLOUT = 'rollout'


@dataclass(frozen=True, eq=False)
class Trajectory:
    """(phase, position) rows in phase order"""
    points: np.ndarray
    source: TrajectorySource = TrajectorySource.ROLLOUT
    outcome: OutcomeKind = OutcomeKind.UNEVALUATED

    def __post_init__(self):
        points = np.atleast_2d(np.array(self.points, dtype=float))
        if points.shape[0] == 0 or points.shape[1] < 2:
            raise InvalidConfig(f"Trajectory needs at least one (phase, position) row, got {points.shape}")
        if np.any(np.diff(points[:, 0]) <= 0):
            raise InvalidConfig("Trajectory phases must be strictly increasing")
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'source', TrajectorySource(self.source))
        object.__setattr__(self, 'outcome', OutcomeKind(self.outcome))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def phases(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, 1:]

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    def with_outcome(self, outcome: OutcomeKind) -> 'Trajectory':
        return replace(self, outcome=OutcomeKind(outcome))

    def subset(self, start: int, stop: int) -> 'Trajectory':
        return replace(self, points=self.points[start:stop])

    @classmethod
    def from_demo(cls, demo: Demonstration) -> 'Trajectory':
        return cls(points=demo.samples, source=TrajectorySource.DEMO)

    def to_frame(self) -> pd.DataFrame:
        columns = ['phase'] + ['x', 'y', 'z'][:self.dim]
        df = pd.DataFrame(self.points, columns=columns)
        df['outcome'] = self.outcome.value
        return df


def export_trajectories(trajectories: Iterable[Trajectory], path: Union[str, Path]) -> int:
    """Write (trajectory, phase, position, outcome) rows as CSV; returns rows written"""
    frames = []
    for index, trajectory in enumerate(trajectories):
        df = trajectory.to_frame()
        df.insert(0, 'trajectory', index)
        frames.append(df)
    if not frames:
        pd.DataFrame(columns=['trajectory', 'phase', 'outcome']).to_csv(path, index=False)
        return 0
    combined = pd.concat(frames, ignore_index=True)
    combined.to_csv(path, index=False)
    logger.info(f"Exported {len(frames)} trajectories ({len(combined)} rows) to {path}")
    return len(combined)
