"""
Simulated tasks, synthetic demonstrations and rollout classification.

A task is a start, a goal, a set of axis-aligned obstacles and the named
waypoint templates (behaviours) that reach the goal without touching them.
Task files are JSON:

    {"name": "simple", "dim": 2, "bounds": [[0, 1], [0, 1]],
     "start": [...], "goal": [...], "goal_tolerance": 0.1,
     "obstacles": [{"min": [...], "max": [...]}],
     "behaviors": {"over": [[x, y], ...]}, "grid_cells": [20, 21, 21],
     "geometry_version": 2}
"""
import json
import logging
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import constants
from .demonstrations import DemoSet, Demonstration, Label
from .exceptions import InvalidConfig, InvalidTaskSpec, NoiseTooLarge, UnknownBehavior
from .geometry import Box, first_collision
from .grid import GridSpec
from .trajectory import OutcomeKind, Trajectory, TrajectorySource

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 5
DEFAULT_DEMO_SAMPLES = 50
DEFAULT_REJECTION_BUDGET = 50


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    detail: Optional[float] = None

    @property
    def success(self) -> bool:
        return self.kind is OutcomeKind.SUCCESS


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    bounds: Tuple[Tuple[float, float], ...]
    start: Tuple[float, ...]
    goal: Tuple[float, ...]
    goal_tolerance: float
    obstacles: Tuple[Box, ...]
    behaviors: Dict[str, np.ndarray]
    grid_cells: Tuple[int, ...]
    geometry_version: int = constants.GEOMETRY_VERSION
    options: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        dim = len(self.bounds)
        if dim not in (2, 3):
            raise InvalidTaskSpec(f"Tasks are 2D or 3D, got {dim} spatial dimensions")
        if len(self.start) != dim or len(self.goal) != dim:
            raise InvalidTaskSpec("Start and goal must match the workspace dimension")
        if len(self.grid_cells) != dim + 1:
            raise InvalidTaskSpec(f"grid_cells needs a phase count plus {dim} spatial counts")
        if len(self.behaviors) < 2:
            raise InvalidTaskSpec(f"A task needs at least two behaviours, got {len(self.behaviors)}")
        for point, label in ((self.start, 'start'), (self.goal, 'goal')):
            if any(box.contains(point) for box in self.obstacles):
                raise InvalidTaskSpec(f"The {label} position {point} lies inside an obstacle")
        behaviors = {}
        for name, waypoints in self.behaviors.items():
            waypoints = np.array(waypoints, dtype=float)
            if waypoints.ndim != 2 or waypoints.shape[1] != dim:
                raise InvalidTaskSpec(f"Behaviour {name} waypoints must be (n, {dim})")
            hit = first_collision(waypoints, self.obstacles)
            if hit is not None:
                raise InvalidTaskSpec(f"Behaviour {name} collides on waypoint segment {hit}")
            waypoints.setflags(write=False)
            behaviors[name] = waypoints
        object.__setattr__(self, 'behaviors', behaviors)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def ambiguity(self) -> int:
        return len(self.behaviors)

    @property
    def behavior_names(self) -> List[str]:
        return list(self.behaviors)

    @property
    def extent(self) -> float:
        return max(hi - lo for lo, hi in self.bounds)

    def template(self, behavior: str) -> np.ndarray:
        try:
            return self.behaviors[behavior]
        except KeyError:
            raise UnknownBehavior(f"Task {self.name} has no behaviour {behavior!r}; "
                                  f"known: {', '.join(self.behaviors)}")

    def grid_spec(self, cells: Optional[Sequence[int]] = None) -> GridSpec:
        cells = tuple(cells) if cells else self.grid_cells
        return GridSpec.for_task(cells[0], self.bounds, cells[1:])

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'dim': self.dim,
            'bounds': [list(b) for b in self.bounds],
            'start': list(self.start),
            'goal': list(self.goal),
            'goal_tolerance': self.goal_tolerance,
            'obstacles': [box.to_dict() for box in self.obstacles],
            'behaviors': {name: wp.tolist() for name, wp in self.behaviors.items()},
            'grid_cells': list(self.grid_cells),
            'geometry_version': self.geometry_version,
            'options': dict(self.options),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'TaskSpec':
        try:
            return cls(name=data['name'],
                       bounds=tuple(tuple(b) for b in data['bounds']),
                       start=tuple(data['start']),
                       goal=tuple(data['goal']),
                       goal_tolerance=float(data['goal_tolerance']),
                       obstacles=tuple(Box.from_dict(o) for o in data['obstacles']),
                       behaviors=dict(data['behaviors']),
                       grid_cells=tuple(data['grid_cells']),
                       geometry_version=int(data.get('geometry_version', constants.GEOMETRY_VERSION)),
                       options=dict(data.get('options', {})))
        except KeyError as e:
            raise InvalidTaskSpec(f"Task description is missing field {e}") from e


def save_task(task: TaskSpec, path: Union[str, Path]) -> None:
    with open(path, 'w') as f:
        json.dump(task.to_dict(), f, indent=2)
    logger.info(f"Saved task {task.name} to {path}")


def load_task(path: Union[str, Path]) -> TaskSpec:
    with open(path, 'r') as f:
        return TaskSpec.from_dict(json.load(f))


def _goal_tolerance(bounds, cells) -> float:
    widths = [(hi - lo) / n for (lo, hi), n in zip(bounds, cells[1:])]
    return constants.GOAL_TOLERANCE_CELLS * max(widths)


def make_simple_task() -> TaskSpec:
    """Two behaviours, over and under one obstacle, sharing their first and last legs"""
    start, goal = constants.SIMPLE_START, constants.SIMPLE_GOAL
    fork_in, fork_out = ((x, start[1]) for x in constants.SIMPLE_FORK_X)
    x0, x1 = constants.SIMPLE_DETOUR_X
    behaviors = {
        'over': [start, fork_in, (x0, constants.SIMPLE_OVER_Y), (x1, constants.SIMPLE_OVER_Y), fork_out, goal],
        'under': [start, fork_in, (x0, constants.SIMPLE_UNDER_Y), (x1, constants.SIMPLE_UNDER_Y), fork_out, goal],
    }
    return TaskSpec(name='simple',
                    bounds=constants.SIMPLE_BOUNDS,
                    start=start,
                    goal=goal,
                    goal_tolerance=_goal_tolerance(constants.SIMPLE_BOUNDS, constants.SIMPLE_GRID_CELLS),
                    obstacles=(Box.centered(constants.SIMPLE_OBSTACLE_CENTER, constants.SIMPLE_OBSTACLE_SIZE),),
                    behaviors=behaviors,
                    grid_cells=constants.SIMPLE_GRID_CELLS)


def slalom_row(gap_count: int, y_range: Tuple[float, float]) -> Tuple[List[Tuple[float, float]], List[Box]]:
    """Gap x-intervals (left to right) and obstacle boxes of one slalom row"""
    if gap_count not in constants.SLALOM_ROW_LAYOUTS:
        raise InvalidTaskSpec(f"No slalom row layout with {gap_count} gaps")
    gap, obstacle = constants.SLALOM_ROW_LAYOUTS[gap_count]
    gaps, boxes = [], []
    x = 0.0
    for index in range(gap_count):
        gaps.append((x, x + gap))
        x += gap
        if index < gap_count - 1:
            boxes.append(Box((x, y_range[0]), (x + obstacle, y_range[1])))
            x += obstacle
    return gaps, boxes


def make_slalom_task(row2_gaps: int = constants.SLALOM_ROW2_GAPS) -> TaskSpec:
    row1, row1_boxes = slalom_row(constants.SLALOM_ROW1_GAPS, constants.SLALOM_ROW1_Y)
    row2, row2_boxes = slalom_row(row2_gaps, constants.SLALOM_ROW2_Y)
    start, goal = constants.SLALOM_START, constants.SLALOM_GOAL
    cross_low, cross_high = constants.SLALOM_CROSS_Y

    behaviors = {}
    for i, (a0, a1) in enumerate(row1):
        for j, (b0, b1) in enumerate(row2):
            first, second = (a0 + a1) / 2, (b0 + b1) / 2
            name = string.ascii_uppercase[i] + string.ascii_uppercase[j]
            behaviors[name] = [start,
                               (first, constants.SLALOM_APPROACH_Y),
                               (first, cross_low),
                               (second, cross_high),
                               (second, constants.SLALOM_EXIT_Y),
                               goal]
    return TaskSpec(name='slalom',
                    bounds=constants.SLALOM_BOUNDS,
                    start=start,
                    goal=goal,
                    goal_tolerance=_goal_tolerance(constants.SLALOM_BOUNDS, constants.SLALOM_GRID_CELLS),
                    obstacles=tuple(row1_boxes + row2_boxes),
                    behaviors=behaviors,
                    grid_cells=constants.SLALOM_GRID_CELLS,
                    options={'row2_gaps': row2_gaps})


def make_pickplace3d_task(gripper_margin: float = constants.PICKPLACE_GRIPPER_MARGIN) -> TaskSpec:
    if gripper_margin < 0:
        raise InvalidTaskSpec(f"Gripper margin must be non-negative, got {gripper_margin}")
    start, goal = constants.PICKPLACE_START, constants.PICKPLACE_GOAL
    x0, x1 = constants.PICKPLACE_DETOUR_X
    z = start[2]
    behaviors = {
        'left': [start, (x0, constants.PICKPLACE_LEFT_Y, z), (x1, constants.PICKPLACE_LEFT_Y, z), goal],
        'right': [start, (x0, constants.PICKPLACE_RIGHT_Y, z), (x1, constants.PICKPLACE_RIGHT_Y, z), goal],
        'over': [start, (x0, start[1], constants.PICKPLACE_OVER_Z), (x1, start[1], constants.PICKPLACE_OVER_Z), goal],
    }
    box = Box(constants.PICKPLACE_BOX_MIN, constants.PICKPLACE_BOX_MAX).inflated(gripper_margin)
    return TaskSpec(name='pickplace3d',
                    bounds=constants.PICKPLACE_BOUNDS,
                    start=start,
                    goal=goal,
                    goal_tolerance=_goal_tolerance(constants.PICKPLACE_BOUNDS, constants.PICKPLACE_GRID_CELLS),
                    obstacles=(box,),
                    behaviors=behaviors,
                    grid_cells=constants.PICKPLACE_GRID_CELLS,
                    options={'gripper_margin': gripper_margin})


TASK_BUILDERS = {
    'simple': make_simple_task,
    'slalom': make_slalom_task,
    'pickplace3d': make_pickplace3d_task,
}


def make_task(name: str, **options) -> TaskSpec:
    try:
        builder = TASK_BUILDERS[name]
    except KeyError:
        raise InvalidTaskSpec(f"Unknown task {name!r}; known: {', '.join(TASK_BUILDERS)}")
    try:
        return builder(**options)
    except TypeError as e:
        raise InvalidTaskSpec(f"Bad options for task {name}: {e}") from e


def evaluate(traj: Trajectory, task: TaskSpec) -> Outcome:
    """Collision beats goal miss; success needs a clean path ending within goal_tolerance"""
    positions = traj.positions
    if positions.shape[1] != task.dim:
        raise InvalidTaskSpec(f"Trajectory is {positions.shape[1]}D but task {task.name} is {task.dim}D")
    hit = first_collision(positions, task.obstacles)
    if hit is not None:
        return Outcome(OutcomeKind.COLLISION, float(hit))
    distance = float(np.linalg.norm(positions[-1] - np.asarray(task.goal)))
    if distance > task.goal_tolerance:
        return Outcome(OutcomeKind.GOAL_MISS, distance)
    return Outcome(OutcomeKind.SUCCESS, distance)


def resample_polyline(waypoints: np.ndarray, n: int) -> np.ndarray:
    """n points evenly spaced by arc length along the polyline"""
    waypoints = np.asarray(waypoints, dtype=float)
    lengths = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    targets = np.linspace(0.0, arc[-1], n)
    return np.column_stack([np.interp(targets, arc, waypoints[:, d]) for d in range(waypoints.shape[1])])


def moving_average(values: np.ndarray, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Column-wise centred moving average with edge padding; keeps the row count"""
    pad = window // 2
    padded = np.pad(values, ((pad, pad), (0, 0)), mode='edge')
    kernel = np.ones(window) / window
    return np.column_stack([np.convolve(padded[:, d], kernel, mode='valid') for d in range(values.shape[1])])


def template_path(task: TaskSpec, behavior: str, n: int = DEFAULT_DEMO_SAMPLES) -> np.ndarray:
    path = moving_average(resample_polyline(task.template(behavior), n))
    path[0], path[-1] = task.start, task.goal
    return path


def synth_demos(task: TaskSpec, behavior: str, n: int, noise: float, seed: int,
                samples: int = DEFAULT_DEMO_SAMPLES,
                rejection_budget: int = DEFAULT_REJECTION_BUDGET) -> DemoSet:
    """
    n noisy, collision-free copies of one behaviour template.

    Noise is smoothed and tapered to zero at both ends so every demo starts
    and finishes exactly on the task's start and goal. A draw that leaves the
    bounds or fails evaluate() is redrawn, up to rejection_budget times.
    """
    if noise < 0:
        raise InvalidConfig(f"Demonstration noise must be non-negative, got {noise}")
    base = template_path(task, behavior, samples)
    phases = np.linspace(0.0, 1.0, samples)
    taper = np.sin(np.pi * phases)[:, None]
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in task.bounds])
    highs = np.array([hi for _, hi in task.bounds])

    demos = []
    for index in range(n):
        for attempt in range(rejection_budget):
            raw = rng.normal(size=(samples + SMOOTHING_WINDOW - 1, task.dim))
            kernel = np.ones(SMOOTHING_WINDOW) / SMOOTHING_WINDOW
            smooth = np.column_stack([np.convolve(raw[:, d], kernel, mode='valid') for d in range(task.dim)])
            path = base + taper * smooth * noise * math.sqrt(SMOOTHING_WINDOW)
            if np.any(path < lows) or np.any(path > highs):
                continue
            samples_array = np.column_stack([phases, path])
            if evaluate(Trajectory(samples_array, source=TrajectorySource.DEMO), task).success:
                demos.append(Demonstration(samples=samples_array, label=Label.POSITIVE, behavior=behavior))
                break
        else:
            raise NoiseTooLarge(f"No collision-free {behavior} demo after {rejection_budget} draws "
                                f"(noise {noise}, demo {index + 1} of {n})")
    logger.debug(f"Synthesised {n} {behavior} demos for task {task.name}")
    return DemoSet(tuple(demos))


def demo_pool(task: TaskSpec, n_per_behavior: int, noise: float, seed: int,
              behaviors: Optional[Sequence[str]] = None,
              samples: int = DEFAULT_DEMO_SAMPLES) -> Dict[str, DemoSet]:
    """Per-behaviour pools of synthetic demos; each behaviour gets its own seed stream"""
    names = list(behaviors) if behaviors is not None else task.behavior_names
    pool = {}
    for name in names:
        task.template(name)
        index = task.behavior_names.index(name)
        stream = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
        pool[name] = synth_demos(task, name, n_per_behavior, noise, stream, samples=samples)
    logger.info(f"Built demo pool for {task.name}: {len(names)} behaviours x {n_per_behavior}")
    return pool


def balanced_demos(pool: Dict[str, DemoSet], n_demos: int, seed: int) -> DemoSet:
    """N_D demos split as evenly as possible over the pooled behaviours, remainder in pool order"""
    names = list(pool)
    if not names:
        raise InvalidConfig("Cannot draw demos from an empty pool")
    if n_demos < 0:
        raise InvalidConfig(f"n_demos must be non-negative, got {n_demos}")
    per_behavior, remainder = divmod(n_demos, len(names))
    rng = np.random.default_rng(seed)
    chosen = []
    for position, name in enumerate(names):
        count = per_behavior + (1 if position < remainder else 0)
        if count > len(pool[name]):
            raise InvalidConfig(f"Pool for {name} has {len(pool[name])} demos, {count} requested")
        for index in sorted(rng.choice(len(pool[name]), size=count, replace=False)):
            chosen.append(pool[name][int(index)])
    return DemoSet(tuple(chosen))


def distinct_behavior_demos(pool: Dict[str, DemoSet], n: int, seed: int) -> DemoSet:
    """One demo from each of n different, randomly chosen behaviours"""
    names = list(pool)
    if not 0 <= n <= len(names):
        raise InvalidConfig(f"Cannot draw {n} distinct behaviours from a pool of {len(names)}")
    rng = np.random.default_rng(seed)
    picked = [names[int(i)] for i in rng.choice(len(names), size=n, replace=False)]
    return DemoSet(tuple(pool[name][int(rng.integers(len(pool[name])))] for name in picked))
