"""
Policy grids and the update rules that fold negative feedback into them.

A policy is a normalized GridDistribution over (phase x space). Rollouts are
read off it one phase slice at a time, each step restricted to cells within
``continuity`` cells (Chebyshev distance) of the previous choice.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .demonstrations import DemoSet, Label
from .exceptions import DeadEnd, InvalidConfig, InvalidDemonstration, SpecMismatch
from .gmm import DEFAULT_MAX_ITER, DEFAULT_TOL, fit_weighted, rasterize
from .grid import GridDistribution, GridSpec, _check_same_spec
from .mask import Mask
from .trajectory import Trajectory, TrajectorySource

logger = logging.getLogger(__name__)

EPSILON_FACTOR = 1e-12
DEFAULT_CONTINUITY = 2
DEFAULT_RESTARTS = 10
SAMPLING_MODES = ('stochastic', 'argmax')


@dataclass(frozen=True)
class AvoidanceSet:
    distributions: Tuple[GridDistribution, ...] = field(default_factory=tuple)

    def __post_init__(self):
        distributions = tuple(self.distributions)
        if len(distributions) > 1:
            _check_same_spec(*distributions)
        object.__setattr__(self, 'distributions', distributions)

    def __iter__(self):
        return iter(self.distributions)

    def __len__(self) -> int:
        return len(self.distributions)


def uniform(spec: GridSpec) -> GridDistribution:
    """U: every cell of the lattice equally likely"""
    return GridDistribution(spec, np.full(spec.shape, 1.0 / spec.size), normalized=True)


def combine_positive(policies: Sequence[GridDistribution]) -> GridDistribution:
    """Normalized cellwise sum of the per-demonstration policies"""
    if not policies:
        raise InvalidConfig("combine_positive needs at least one policy")
    spec = _check_same_spec(*policies)
    total = np.sum([policy.values for policy in policies], axis=0)
    return GridDistribution.from_values(spec, total)


def _mask_field(mask: Optional[Mask], spec: GridSpec) -> np.ndarray:
    if mask is None:
        return np.ones(spec.shape)
    return mask.broadcast(spec)


def avoidance_factor(avoid: GridDistribution, mask: Optional[Mask]) -> np.ndarray:
    """
    Cellwise U - mu * scale(avoid), floored at a tiny positive value.

    The avoidance grid is rescaled so its largest cell equals the uniform
    value; that cell's factor reaches the floor and protected cells keep
    exactly U.
    """
    u = avoid.uniform_value
    mu = _mask_field(mask, avoid.spec)
    peak = float(avoid.values.max())
    scale = u / peak if peak > 0 else 0.0
    factor = u - mu * (scale * avoid.values)
    return np.maximum(factor, EPSILON_FACTOR * u)


def poe_apply_negative(policy: GridDistribution, avoid: GridDistribution,
                       mask: Optional[Mask] = None) -> GridDistribution:
    """Product of experts: policy times the masked avoidance factor, renormalized"""
    spec = _check_same_spec(policy, avoid)
    factor = avoidance_factor(avoid, mask)
    return GridDistribution.from_values(spec, factor * policy.values)


def poe_apply_sequence(policy: GridDistribution, avoids: AvoidanceSet,
                       mask: Optional[Mask] = None) -> GridDistribution:
    """Fold every avoidance in order; the result does not depend on the order"""
    result = policy
    for avoid in avoids:
        result = poe_apply_negative(result, avoid, mask)
    return result


def moe_apply_negative(policy: GridDistribution, avoid: GridDistribution,
                       mask: Optional[Mask], mix: float) -> GridDistribution:
    """Mixture of experts: (1 - mix) * policy + mix * normalized avoidance factor"""
    if not 0.0 < mix < 1.0:
        raise InvalidConfig(f"Mixture weight must be in (0, 1), got {mix}")
    spec = _check_same_spec(policy, avoid)
    factor = avoidance_factor(avoid, mask)
    factor = factor / factor.sum()
    return GridDistribution.from_values(spec, (1.0 - mix) * policy.values + mix * factor)


def neg_weight_refit(all_demos: DemoSet, k: int, neg_weight: float, seed: int, spec: GridSpec,
                     tol: Optional[float] = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> GridDistribution:
    """Refit over every stored demo, failures weighted by ``neg_weight``, then rasterize"""
    if neg_weight > 0:
        raise InvalidConfig(f"neg_weight must not be positive, got {neg_weight}")
    if not len(all_demos.positives()):
        raise InvalidDemonstration("neg_weight_refit needs at least one positive demonstration")
    samples, _ = all_demos.stack()
    weights = np.concatenate([
        np.full(demo.samples.shape[0], demo.weight if demo.label is Label.POSITIVE else neg_weight)
        for demo in all_demos
    ])
    mixture = fit_weighted(samples, weights, k, seed, tol=tol, max_iter=max_iter, allow_negative=True)
    logger.debug(f"Refit over {len(all_demos)} demos ({len(all_demos.negatives())} negative) "
                 f"kept {mixture.k} components")
    return rasterize(mixture, spec)


def _window(index: Tuple[int, ...], shape: Tuple[int, ...], radius: int) -> Tuple[slice, ...]:
    return tuple(slice(max(0, i - radius), min(n, i + radius + 1)) for i, n in zip(index, shape))


def _sample_path(values: np.ndarray, continuity: int, rng: np.random.Generator) -> List[Tuple[int, ...]]:
    """One spatial cell per phase slice, each drawn from the window around the last"""
    spatial_shape = values.shape[1:]
    path: List[Tuple[int, ...]] = []
    for step in range(values.shape[0]):
        if step == 0:
            region, offset = values[0], (0,) * len(spatial_shape)
        else:
            window = _window(path[-1], spatial_shape, continuity)
            region, offset = values[step][window], tuple(s.start for s in window)
        total = region.sum()
        if not total > 0:
            raise DeadEnd(f"Phase slice {step} has no mass within {continuity} cells of the previous step")
        flat = rng.choice(region.size, p=(region / total).ravel())
        local = np.unravel_index(flat, region.shape)
        path.append(tuple(int(o + l) for o, l in zip(offset, local)))
    return path


def _shifted(scores: np.ndarray, offset: Tuple[int, ...]) -> np.ndarray:
    """out[c] = scores[c + offset], -inf where c + offset falls outside"""
    out = np.full(scores.shape, -np.inf)
    dst, src = [], []
    for o, n in zip(offset, scores.shape):
        if o >= 0:
            dst.append(slice(0, n - o))
            src.append(slice(o, n))
        else:
            dst.append(slice(-o, n))
            src.append(slice(0, n + o))
    out[tuple(dst)] = scores[tuple(src)]
    return out


def _argmax_path(values: np.ndarray, continuity: int) -> List[Tuple[int, ...]]:
    """Viterbi search for the most probable path under the continuity window"""
    spatial_shape = values.shape[1:]
    with np.errstate(divide='ignore'):
        log_values = np.log(values)
    # Lexicographic offsets visit predecessors in increasing flat index, so
    # keeping only strict improvements resolves ties to the lowest index.
    offsets = [o for o in itertools.product(range(-continuity, continuity + 1), repeat=len(spatial_shape))
               if all(-n < v < n for v, n in zip(o, spatial_shape))]
    score = log_values[0]
    back = []
    for step in range(1, values.shape[0]):
        best = np.full(spatial_shape, -np.inf)
        choice = np.zeros(spatial_shape, dtype=np.int64)
        for index, offset in enumerate(offsets):
            candidate = _shifted(score, offset)
            better = candidate > best
            best = np.where(better, candidate, best)
            choice = np.where(better, index, choice)
        back.append(choice)
        score = log_values[step] + best
    if not np.isfinite(score.max()):
        raise DeadEnd("No path with non-zero probability respects the continuity limit")

    cell = tuple(int(i) for i in np.unravel_index(np.argmax(score), spatial_shape))
    path = [cell]
    for choice in reversed(back):
        offset = offsets[choice[cell]]
        cell = tuple(c + o for c, o in zip(cell, offset))
        path.append(cell)
    return path[::-1]


def _path_to_trajectory(spec: GridSpec, path: List[Tuple[int, ...]]) -> Trajectory:
    phases = spec.centers(0)
    axes = [spec.centers(axis) for axis in range(1, spec.ndim)]
    points = [[phases[step]] + [axes[a][i] for a, i in enumerate(cell)] for step, cell in enumerate(path)]
    return Trajectory(points=np.array(points), source=TrajectorySource.ROLLOUT)


def sample_trajectory(policy: GridDistribution, mode: str = 'stochastic',
                      continuity: int = DEFAULT_CONTINUITY, seed: int = 0,
                      restarts: int = DEFAULT_RESTARTS) -> Trajectory:
    """
    Read a rollout off the policy, one cell centre per phase slice.

    Stochastic mode restarts from scratch on a dead end, at most ``restarts``
    times; argmax mode is deterministic and never restarts.
    """
    if mode not in SAMPLING_MODES:
        raise InvalidConfig(f"Unknown sampling mode: {mode}")
    if continuity < 1:
        raise InvalidConfig(f"Continuity radius must be at least 1, got {continuity}")
    values = policy.values

    if mode == 'argmax':
        return _path_to_trajectory(policy.spec, _argmax_path(values, continuity))

    rng = np.random.default_rng(seed)
    last_error: Optional[DeadEnd] = None
    for attempt in range(restarts + 1):
        try:
            return _path_to_trajectory(policy.spec, _sample_path(values, continuity, rng))
        except DeadEnd as e:
            last_error = e
            logger.debug(f"Rollout attempt {attempt + 1} hit a dead end: {e}")
    logger.warning(f"Rollout failed after {restarts} restarts")
    raise DeadEnd(f"Gave up after {restarts} restarts: {last_error}")
