"""
Experiment suites and the reports built from them.

Suite files are JSON:

    {"suite_version": 1,
     "suites": [{"name": "simple_methods", "task": "simple", "task_options": {},
                 "trials": 30, "defaults": {"max_cycles": 5},
                 "variants": [{"name": "poe", "method": "poe"}, ...]}]}

Every variant is a FeedbackConfig: the suite defaults overlaid with the
variant's own keys.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .env import TaskSpec, make_task
from .exceptions import InvalidConfig, NegativeFeedbackError
from .feedback import (HISTORY_COLUMNS, CycleRecord, FeedbackConfig, history_frame, run_trials,
                       select_demos, success_curve)
from .grid import GridDistribution
from .mask import Mask
from .results_storage_service import ResultsStorageService
from .trajectory import OutcomeKind, export_trajectories

logger = logging.getLogger(__name__)

SUITE_FORMAT_VERSION = 1
DEFAULT_SUITE_FILE = Path(__file__).resolve().parent / 'suites' / 'default_suites.json'

SUMMARY_COLUMNS = ['variant', 'cycle', 'success_rate', 'mean_wall_time_s', 'mean_state_bytes', 'trials']
TIMING_COLUMNS = ['method', 'cycle', 'mean_wall_time_s', 'std_wall_time_s', 'runs']

# Reference byte counts from a hardware run, reported alongside the measured ones.
REFERENCE_DATASET_BYTES = 8768
REFERENCE_POE_BYTES = 512


@dataclass(frozen=True, eq=False)
class ExperimentSuite:
    name: str
    task: str
    variants: Tuple[FeedbackConfig, ...]
    trials: int = 10
    task_options: Dict[str, object] = field(default_factory=dict)
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidConfig(f"Suite {self.name}: trials must be at least 1, got {self.trials}")
        names = [variant.name for variant in self.variants]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise InvalidConfig(f"Suite {self.name}: duplicate variant names {', '.join(duplicates)}")
        object.__setattr__(self, 'variants', tuple(self.variants))

    def build_task(self) -> TaskSpec:
        return make_task(self.task, **self.task_options)

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentSuite':
        try:
            defaults = dict(data.get('defaults', {}))
            variants = tuple(FeedbackConfig.from_dict({**defaults, **variant}) for variant in data['variants'])
            return cls(name=data['name'], task=data['task'], variants=variants,
                       trials=int(data.get('trials', 10)),
                       task_options=dict(data.get('task_options', {})),
                       output_dir=data.get('output_dir'))
        except KeyError as e:
            raise InvalidConfig(f"Suite description is missing field {e}") from e
        except TypeError as e:
            raise InvalidConfig(f"Bad suite description: {e}") from e

    def with_overrides(self, seed: Optional[int] = None, trials: Optional[int] = None) -> 'ExperimentSuite':
        variants = self.variants
        if seed is not None:
            variants = tuple(replace(v, seed=seed) for v in variants)
        return replace(self, variants=variants, trials=trials if trials is not None else self.trials)


def load_suites(path: Union[str, Path] = DEFAULT_SUITE_FILE) -> Dict[str, ExperimentSuite]:
    with open(path, 'r') as f:
        data = json.load(f)
    version = data.get('suite_version')
    if version != SUITE_FORMAT_VERSION:
        raise InvalidConfig(f"{path}: unsupported suite_version {version}")
    suites = {}
    for entry in data.get('suites', []):
        suite = ExperimentSuite.from_dict(entry)
        suites[suite.name] = suite
    logger.info(f"Loaded {len(suites)} suites from {path}")
    return suites


@dataclass
class SuiteResult:
    suite: str
    history: pd.DataFrame
    summary: pd.DataFrame
    failures: Dict[str, str] = field(default_factory=dict)
    paths: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def summarize(histories: List[List[CycleRecord]], config: FeedbackConfig) -> pd.DataFrame:
    """Per-cycle success fraction, mean wall time, mean state size and trial count for one variant"""
    curve = success_curve(histories, config.max_cycles)
    rows = []
    for cycle in range(config.max_cycles + 1):
        records = [r for history in histories for r in history if r.cycle == cycle]
        rows.append({
            'variant': config.name,
            'cycle': cycle,
            'success_rate': float(curve[cycle]),
            'mean_wall_time_s': float(np.mean([r.wall_time_s for r in records])) if records else np.nan,
            'mean_state_bytes': float(np.mean([r.state_bytes for r in records])) if records else np.nan,
            'trials': len(histories),
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def run_suite(suite: ExperimentSuite, storage: Optional[ResultsStorageService] = None, workers: int = 1,
              overrides: Optional[Dict[int, Dict[int, OutcomeKind]]] = None,
              export_rollouts: bool = False) -> SuiteResult:
    """
    Run every variant and write ``<suite>_history.csv`` and ``<suite>_summary.csv``.

    Both files are rewritten after each variant, so a failing variant leaves
    the finished ones on disk. With ``export_rollouts`` every rollout of a
    variant also goes to ``<suite>_<variant>_rollouts.csv``.
    """
    storage = storage or ResultsStorageService(suite.output_dir)
    task = suite.build_task()
    histories, summaries, failures = [], [], {}
    paths: List[str] = []
    extra_paths: List[str] = []

    for config in suite.variants:
        try:
            logger.info(f"Suite {suite.name}: running variant {config.name} ({suite.trials} trials)")
            trial_histories = run_trials(config, task, suite.trials, workers, overrides)
            histories.append(history_frame(trial_histories, config.name))
            summaries.append(summarize(trial_histories, config))
            if export_rollouts:
                rollouts = [r.rollout for history in trial_histories for r in history if r.rollout is not None]
                path = storage.path_for(f"{suite.name}_{config.name}_rollouts.csv")
                export_trajectories(rollouts, path)
                extra_paths.append(path)
        except NegativeFeedbackError as e:
            logger.error(f"Suite {suite.name}: variant {config.name} failed: {e}")
            failures[config.name] = str(e)
        paths = _flush(suite.name, storage, histories, summaries)

    if not suite.variants:
        paths = _flush(suite.name, storage, histories, summaries)
    history = pd.concat(histories, ignore_index=True) if histories else pd.DataFrame(columns=HISTORY_COLUMNS)
    summary = pd.concat(summaries, ignore_index=True) if summaries else pd.DataFrame(columns=SUMMARY_COLUMNS)
    return SuiteResult(suite=suite.name, history=history, summary=summary, failures=failures,
                       paths=paths + extra_paths)


def _flush(name: str, storage: ResultsStorageService, histories, summaries) -> List[str]:
    history = pd.concat(histories, ignore_index=True) if histories else pd.DataFrame(columns=HISTORY_COLUMNS)
    summary = pd.concat(summaries, ignore_index=True) if summaries else pd.DataFrame(columns=SUMMARY_COLUMNS)
    return [storage.write_table(history, f"{name}_history.csv"),
            storage.write_table(summary, f"{name}_summary.csv")]


def timing_report(history_sets: Dict[str, List[List[CycleRecord]]]) -> pd.DataFrame:
    """Mean and population std of feedback-cycle wall time per method; cycle 0 is initial learning"""
    rows = []
    for method, histories in history_sets.items():
        if not histories:
            raise InvalidConfig(f"No histories for method {method}")
        cycles = sorted({r.cycle for history in histories for r in history if r.cycle > 0})
        for cycle in cycles:
            times = np.array([r.wall_time_s for history in histories for r in history if r.cycle == cycle])
            rows.append({
                'method': method,
                'cycle': cycle,
                'mean_wall_time_s': float(times.mean()),
                'std_wall_time_s': float(times.std()),
                'runs': int(times.size),
            })
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def run_timing_study(suite: ExperimentSuite, workers: int = 1,
                     results: Optional[Dict[str, List[List[CycleRecord]]]] = None) -> Dict[str, List[List[CycleRecord]]]:
    """
    Histories of every variant of the suite, keyed by variant name.

    Variants finished before an error are already in ``results`` when one is passed.
    """
    results = {} if results is None else results
    task = suite.build_task()
    for config in suite.variants:
        results[config.name] = run_trials(config, task, suite.trials, workers)
    return results


@dataclass(frozen=True)
class MemoryReport:
    demo_count: int
    dataset_bytes: int
    poe_bytes: int
    doubled_demo_count: int
    doubled_dataset_bytes: int
    doubled_poe_bytes: int
    reference_dataset_bytes: int = REFERENCE_DATASET_BYTES
    reference_poe_bytes: int = REFERENCE_POE_BYTES

    @property
    def poe_size_independent_of_demos(self) -> bool:
        return self.poe_bytes == self.doubled_poe_bytes

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {'scheme': 'dataset', 'demos': self.demo_count, 'bytes': self.dataset_bytes,
             'reference_bytes': self.reference_dataset_bytes},
            {'scheme': 'dataset', 'demos': self.doubled_demo_count, 'bytes': self.doubled_dataset_bytes,
             'reference_bytes': self.reference_dataset_bytes},
            {'scheme': 'poe', 'demos': self.demo_count, 'bytes': self.poe_bytes,
             'reference_bytes': self.reference_poe_bytes},
            {'scheme': 'poe', 'demos': self.doubled_demo_count, 'bytes': self.doubled_poe_bytes,
             'reference_bytes': self.reference_poe_bytes},
        ])


def _scheme_sizes(config: FeedbackConfig, task: TaskSpec) -> Tuple[int, int, int]:
    spec = task.grid_spec(config.grid_cells)
    demos = select_demos(config, task, config.seed)
    policy = GridDistribution(spec, np.full(spec.shape, 1.0 / spec.size), normalized=True)
    poe_bytes = len(policy.to_bytes()) + Mask.nbytes_for(spec.spatial())
    return len(demos), len(demos.to_bytes()), poe_bytes


def memory_report(config: FeedbackConfig, task: TaskSpec) -> MemoryReport:
    """Stored-dataset size against policy grid plus mask, at the config's demo count and at twice it"""
    if config.distinct_behaviors is not None:
        n = config.distinct_behaviors
    elif config.n_demos is not None:
        n = config.n_demos
    else:
        n = config.demos_per_behavior * len(config.behaviors or task.behavior_names)
    count, dataset_bytes, poe_bytes = _scheme_sizes(config, task)
    doubled = replace(config, n_demos=2 * n, distinct_behaviors=None,
                      pool_size=max(config.pool_size, 2 * n))
    doubled_count, doubled_dataset, doubled_poe = _scheme_sizes(doubled, task)
    report = MemoryReport(count, dataset_bytes, poe_bytes, doubled_count, doubled_dataset, doubled_poe)
    if not report.poe_size_independent_of_demos:
        logger.warning("Policy plus mask size changed with the demo count")
    logger.info(f"Memory: dataset {dataset_bytes} B for {count} demos, policy+mask {poe_bytes} B")
    return report


def flat_within(means: np.ndarray, tolerance: float = 0.2) -> bool:
    centre = means.mean()
    return bool(np.all(np.abs(means - centre) <= tolerance * centre))


def timing_structure(report: pd.DataFrame, flat_method: str = 'poe', growing_method: str = 'neg_weight',
                     first_cycle: int = 2) -> Dict[str, bool]:
    """Whether one method's per-cycle cost stays flat while the other's keeps growing"""
    checks = {}
    flat = report[(report['method'] == flat_method) & (report['cycle'] >= first_cycle)]
    if not flat.empty:
        checks[f"{flat_method}_flat"] = flat_within(flat['mean_wall_time_s'].to_numpy())
    growing = report[report['method'] == growing_method].sort_values('cycle')
    if not growing.empty:
        checks[f"{growing_method}_increasing"] = bool(np.all(np.diff(growing['mean_wall_time_s'].to_numpy()) > 0))
    return checks
