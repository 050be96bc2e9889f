"""
The negative feedback loop.

Learn a policy from the positive demonstrations, roll it out, classify the
rollout, and while it fails turn the selected part of the failure into an
avoidance distribution and fold it into the policy.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .conf import get_setting
from .demonstrations import DemoSet, Demonstration, Label
from .env import Outcome, TaskSpec, balanced_demos, demo_pool, distinct_behavior_demos, evaluate
from .exceptions import DeadEnd, EmptySelection, InvalidConfig
from .gmm import fit_em, fit_weighted, rasterize
from .grid import GridDistribution, GridSpec
from .mask import Mask, build_mask, select_region
from .policy import (SAMPLING_MODES, combine_positive, moe_apply_negative, neg_weight_refit,
                     poe_apply_negative, sample_trajectory)
from .trajectory import OutcomeKind, Trajectory

logger = logging.getLogger(__name__)

METHODS = ('poe', 'moe', 'neg_weight')
SELECTORS = ('mask', 'central', 'none')
HISTORY_COLUMNS = ['variant', 'trial', 'cycle', 'outcome', 'success', 'wall_time_s', 'state_bytes']

# Seed stream purposes, combined with (base seed, cycle)
_DEMO_STREAM, _POSITIVE_STREAM, _ROLLOUT_STREAM, _AVOID_STREAM = range(4)


def _setting(name):
    return field(default_factory=lambda: get_setting(name))


@dataclass(frozen=True)
class FeedbackConfig:
    name: str = 'default'
    method: str = 'poe'
    selector: str = 'mask'
    mask_threshold: float = _setting('MASK_THRESHOLD')
    central_fraction: float = _setting('CENTRAL_FRACTION')
    max_cycles: int = 5
    stop_on_success: bool = True
    behaviors: Optional[Tuple[str, ...]] = None
    demos_per_behavior: int = 1
    n_demos: Optional[int] = None
    distinct_behaviors: Optional[int] = None
    pool_size: int = _setting('DEMO_POOL_SIZE')
    noise_fraction: float = _setting('DEMO_NOISE_FRACTION')
    demo_samples: int = _setting('DEMO_SAMPLES')
    grid_cells: Optional[Tuple[int, ...]] = None
    k_positive: int = _setting('K_POSITIVE')
    k_avoid: int = _setting('K_AVOID')
    em_tol: Optional[float] = _setting('EM_TOL')
    em_max_iter: int = _setting('EM_MAX_ITER')
    neg_weight: float = _setting('NEG_WEIGHT')
    moe_mix: Optional[float] = _setting('MOE_MIX')
    avoid_min_std_cells: float = _setting('AVOID_MIN_STD_CELLS')
    sampling: str = 'stochastic'
    continuity: int = _setting('CONTINUITY')
    restarts: int = _setting('DEAD_END_RESTARTS')
    policy_per_demo: bool = False
    keep_snapshots: bool = False
    seed: int = _setting('SEED')

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"Unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if self.selector not in SELECTORS:
            raise InvalidConfig(f"Unknown selector {self.selector!r}; expected one of {', '.join(SELECTORS)}")
        if self.sampling not in SAMPLING_MODES:
            raise InvalidConfig(f"Unknown sampling mode {self.sampling!r}")
        if not 0 < self.mask_threshold <= 1:
            raise InvalidConfig(f"mask_threshold must be in (0, 1], got {self.mask_threshold}")
        if not 0 <= self.central_fraction < 0.5:
            raise InvalidConfig(f"central_fraction must be in [0, 0.5), got {self.central_fraction}")
        if self.max_cycles < 0:
            raise InvalidConfig(f"max_cycles must be non-negative, got {self.max_cycles}")
        if self.moe_mix is not None and not 0 < self.moe_mix < 1:
            raise InvalidConfig(f"moe_mix must be in (0, 1), got {self.moe_mix}")
        if self.neg_weight > 0:
            raise InvalidConfig(f"neg_weight must not be positive, got {self.neg_weight}")
        if self.k_positive < 1 or self.k_avoid < 1:
            raise InvalidConfig("Component counts must be at least 1")
        if self.continuity < 1:
            raise InvalidConfig(f"continuity must be at least 1, got {self.continuity}")
        if self.demo_samples < 2:
            raise InvalidConfig(f"demo_samples must be at least 2, got {self.demo_samples}")
        if self.behaviors is not None:
            object.__setattr__(self, 'behaviors', tuple(self.behaviors))
        if self.grid_cells is not None:
            object.__setattr__(self, 'grid_cells', tuple(self.grid_cells))

    @classmethod
    def from_dict(cls, data: dict) -> 'FeedbackConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"Unknown feedback config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def mix_for(self, cycle: int) -> float:
        return self.moe_mix if self.moe_mix is not None else 1.0 / (1.0 + cycle)


@dataclass(frozen=True, eq=False)
class CycleRecord:
    cycle: int
    rollout: Optional[Trajectory]
    outcome: Outcome
    wall_time_s: float
    state_bytes: int
    policy_digest: str
    snapshot: Optional[GridDistribution] = None

    @property
    def success(self) -> bool:
        return self.outcome.success


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def build_pool(config: FeedbackConfig, task: TaskSpec,
               behaviors: Optional[List[str]] = None) -> Dict[str, DemoSet]:
    """Demo pool shared by every trial of a config; seeded by the config seed only"""
    names = behaviors if behaviors is not None else list(config.behaviors or task.behavior_names)
    return demo_pool(task, config.pool_size, config.noise_fraction * task.extent, config.seed,
                     behaviors=names, samples=config.demo_samples)


def select_demos(config: FeedbackConfig, task: TaskSpec, seed: int,
                 pool: Optional[Dict[str, DemoSet]] = None) -> DemoSet:
    names = list(config.behaviors or task.behavior_names)
    for name in names:
        task.template(name)
    if config.distinct_behaviors is not None:
        if pool is None:
            rng = np.random.default_rng(seed)
            picked = [names[int(i)] for i in rng.choice(len(names), size=config.distinct_behaviors, replace=False)]
            pool = build_pool(config, task, picked)
        return distinct_behavior_demos(pool, config.distinct_behaviors, derive_seed(seed, 1))
    if pool is None:
        pool = build_pool(config, task, names)
    n_demos = config.n_demos if config.n_demos is not None else config.demos_per_behavior * len(names)
    return balanced_demos({name: pool[name] for name in names}, n_demos, seed)


def learn_positive(demos: DemoSet, spec: GridSpec, config: FeedbackConfig, seed: int) -> GridDistribution:
    if config.policy_per_demo:
        policies = []
        for index, demo in enumerate(demos):
            k = min(config.k_positive, demo.samples.shape[0])
            mixture = fit_em(DemoSet((demo,)), k, derive_seed(seed, index),
                             tol=config.em_tol, max_iter=config.em_max_iter)
            policies.append(rasterize(mixture, spec))
        return combine_positive(policies)
    mixture = fit_em(demos, config.k_positive, seed, tol=config.em_tol, max_iter=config.em_max_iter)
    return rasterize(mixture, spec)


def failure_to_negative_demo(segment: Trajectory, phase_width: float, n_samples: int,
                             weight: float = -1.0) -> Demonstration:
    """
    Resample a selected failure region to ``n_samples`` points.

    Each selected point stands for its phase cell; samples are spread evenly
    over those cells and interpolated within runs of adjacent points, so
    separate runs are never bridged.
    """
    phases, positions = segment.phases, segment.positions
    breaks = np.flatnonzero(np.diff(phases) > 1.5 * phase_width) + 1
    runs = np.split(np.arange(len(phases)), breaks)
    intervals = [(max(0.0, phases[run[0]] - phase_width / 2), min(1.0, phases[run[-1]] + phase_width / 2))
                 for run in runs]
    lengths = np.array([hi - lo for lo, hi in intervals])
    offsets = np.concatenate([[0.0], np.cumsum(lengths)])
    targets = (np.arange(n_samples) + 0.5) / n_samples * offsets[-1]

    rows = []
    for target in targets:
        r = min(int(np.searchsorted(offsets, target, side='right')) - 1, len(runs) - 1)
        phase = intervals[r][0] + (target - offsets[r])
        run = runs[r]
        position = [np.interp(phase, phases[run], positions[run, d]) for d in range(positions.shape[1])]
        rows.append([phase] + position)
    return Demonstration(samples=np.array(rows), label=Label.NEGATIVE, weight=weight)


def learn_avoidance(negative: Demonstration, spec: GridSpec, config: FeedbackConfig, seed: int) -> GridDistribution:
    """Fit a mixture to the failure segment and rasterize it onto the policy grid"""
    samples = negative.samples
    k = min(config.k_avoid, samples.shape[0])
    min_std = config.avoid_min_std_cells * spec.widths if config.avoid_min_std_cells > 0 else None
    mixture = fit_weighted(samples, np.ones(samples.shape[0]), k, seed,
                           tol=config.em_tol, max_iter=config.em_max_iter, min_std=min_std)
    return rasterize(mixture, spec)


def _rollout(policy: GridDistribution, config: FeedbackConfig, task: TaskSpec, seed: int,
             override: Optional[OutcomeKind]) -> Tuple[Optional[Trajectory], Outcome]:
    try:
        traj = sample_trajectory(policy, config.sampling, config.continuity, seed, config.restarts)
    except DeadEnd as e:
        logger.warning(f"Rollout dead end, counted as a goal miss: {e}")
        return None, Outcome(OutcomeKind.GOAL_MISS)
    outcome = Outcome(OutcomeKind(override)) if override is not None else evaluate(traj, task)
    return traj.with_outcome(outcome.kind), outcome


def run_feedback(config: FeedbackConfig, task: TaskSpec, trial: int = 0,
                 outcome_overrides: Optional[Dict[int, OutcomeKind]] = None,
                 pool: Optional[Dict[str, DemoSet]] = None) -> List[CycleRecord]:
    """
    One trial of the feedback loop: learn from demos, roll out, and fold each
    failure back in until a success (when stop_on_success) or max_cycles.

    Record 0 is the rollout of the unmodified positive policy. A cycle whose
    rollout dead-ended or whose selection came back empty leaves the policy
    unchanged.
    """
    overrides = outcome_overrides or {}
    base = config.seed + trial
    spec = task.grid_spec(config.grid_cells)
    demos = select_demos(config, task, derive_seed(base, _DEMO_STREAM), pool)
    mask_bytes = Mask.nbytes_for(spec.spatial()) if config.selector == 'mask' else 0

    start = time.perf_counter()
    policy = learn_positive(demos, spec, config, derive_seed(base, _POSITIVE_STREAM))
    elapsed = time.perf_counter() - start

    dataset = demos

    def state_bytes() -> int:
        stored = dataset.to_bytes() if config.method == 'neg_weight' else policy.to_bytes()
        return len(stored) + mask_bytes

    def record(cycle, traj, outcome, wall) -> CycleRecord:
        return CycleRecord(cycle=cycle, rollout=traj, outcome=outcome, wall_time_s=wall,
                           state_bytes=state_bytes(), policy_digest=policy.digest(),
                           snapshot=policy if config.keep_snapshots else None)

    traj, outcome = _rollout(policy, config, task, derive_seed(base, _ROLLOUT_STREAM, 0), overrides.get(0))
    history = [record(0, traj, outcome, elapsed)]
    mask: Optional[Mask] = None

    cycle = 0
    while cycle < config.max_cycles and not (outcome.success and config.stop_on_success):
        cycle += 1
        start = time.perf_counter()
        if config.selector == 'mask' and mask is None:
            mask = build_mask(demos, spec.spatial(), config.mask_threshold)
        if traj is None:
            logger.warning(f"Cycle {cycle}: no failure trajectory to learn from, policy unchanged")
        else:
            try:
                region = select_region(traj, config.selector, mask, config.central_fraction)
            except EmptySelection as e:
                logger.warning(f"Cycle {cycle}: {e}; policy unchanged")
                region = None
            if region is not None:
                negative = failure_to_negative_demo(region, float(spec.widths[0]), config.demo_samples,
                                                    weight=config.neg_weight)
                policy, dataset = _apply(policy, dataset, negative, mask, spec, config,
                                         derive_seed(base, _AVOID_STREAM, cycle), cycle)
        elapsed = time.perf_counter() - start

        traj, outcome = _rollout(policy, config, task, derive_seed(base, _ROLLOUT_STREAM, cycle),
                                 overrides.get(cycle))
        history.append(record(cycle, traj, outcome, elapsed))
        logger.debug(f"Trial {trial} cycle {cycle}: {outcome.kind.value} ({elapsed:.4f}s)")

    logger.info(f"Trial {trial} ({config.name}) finished after {cycle} cycles: {outcome.kind.value}")
    return history


def _apply(policy: GridDistribution, dataset: DemoSet, negative: Demonstration, mask: Optional[Mask],
           spec: GridSpec, config: FeedbackConfig, seed: int, cycle: int) -> Tuple[GridDistribution, DemoSet]:
    if config.method == 'neg_weight':
        dataset = dataset.with_added(negative)
        policy = neg_weight_refit(dataset, config.k_positive, config.neg_weight, seed, spec,
                                  tol=config.em_tol, max_iter=config.em_max_iter)
        return policy, dataset
    avoid = learn_avoidance(negative, spec, config, seed)
    if config.method == 'poe':
        return poe_apply_negative(policy, avoid, mask), dataset
    return moe_apply_negative(policy, avoid, mask, config.mix_for(cycle)), dataset


def run_trials(config: FeedbackConfig, task: TaskSpec, trials: int, workers: int = 1,
               overrides: Optional[Dict[int, Dict[int, OutcomeKind]]] = None) -> List[List[CycleRecord]]:
    """Independent seeded trials; results come back in trial order whatever the worker count"""
    if trials < 1:
        raise InvalidConfig(f"trials must be at least 1, got {trials}")
    overrides = overrides or {}
    pool = build_pool(config, task) if config.distinct_behaviors is None else None

    def one(trial: int) -> List[CycleRecord]:
        return run_feedback(config, task, trial, overrides.get(trial), pool)

    if workers <= 1:
        return [one(trial) for trial in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(one, range(trials)))


def success_curve(histories: List[List[CycleRecord]], max_cycles: int) -> np.ndarray:
    """Fraction of trials that have succeeded at or before each cycle"""
    curve = np.zeros(max_cycles + 1)
    for history in histories:
        first = next((r.cycle for r in history if r.success), None)
        if first is not None:
            curve[first:] += 1
    return curve / len(histories)


def success_rate(config: FeedbackConfig, task: TaskSpec, trials: int, workers: int = 1,
                 overrides: Optional[Dict[int, Dict[int, OutcomeKind]]] = None) -> np.ndarray:
    histories = run_trials(config, task, trials, workers, overrides)
    return success_curve(histories, config.max_cycles)


def history_frame(histories: List[List[CycleRecord]], variant: str) -> pd.DataFrame:
    rows = [
        {
            'variant': variant,
            'trial': trial,
            'cycle': record.cycle,
            'outcome': record.outcome.kind.value,
            'success': int(record.success),
            'wall_time_s': record.wall_time_s,
            'state_bytes': record.state_bytes,
        }
        for trial, history in enumerate(histories)
        for record in history
    ]
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)
