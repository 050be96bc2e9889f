import json
import logging
import os

import pandas as pd
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from avoidance.bench import (DEFAULT_SUITE_FILE, load_suites, memory_report, run_suite, run_timing_study,
                             timing_report, timing_structure)
from avoidance.conf import get_setting
from avoidance.exceptions import InvalidConfig, NegativeFeedbackError
from avoidance.feedback import FeedbackConfig, history_frame, select_demos
from avoidance.env import make_task
from avoidance.mask import build_mask
from avoidance.models import SuiteRun
from avoidance.plotting import plot_emit, plot_mask
from avoidance.results_storage_service import ResultsStorageService
from avoidance.trajectory import OutcomeKind

logger = logging.getLogger(__name__)


def load_outcome_overrides(path):
    """{"trial:cycle": "Success"} -> {trial: {cycle: OutcomeKind}}"""
    with open(path, 'r') as f:
        raw = json.load(f)
    overrides = {}
    for key, value in raw.items():
        try:
            trial, cycle = (int(part) for part in key.split(':'))
            kind = OutcomeKind(value)
        except ValueError as e:
            raise InvalidConfig(f"Bad outcome override {key!r}: {value!r}") from e
        if kind is OutcomeKind.UNEVALUATED:
            raise InvalidConfig(f"Outcome override {key!r} must be Success, Collision or GoalMiss")
        overrides.setdefault(trial, {})[cycle] = kind
    return overrides


class Command(BaseCommand):
    help = 'Run negative feedback experiment suites and build their reports'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', required=True)

        common = {
            '--suite-file': dict(default=str(DEFAULT_SUITE_FILE), help='Suite definition file (JSON)'),
            '--output-dir': dict(default=None, help='Results directory (default: NEGFEED_OUTPUT_DIR)'),
            '--seed': dict(type=int, default=None, help='Override every variant seed'),
            '--workers': dict(type=int, default=None, help='Parallel trials per variant'),
            '--trials': dict(type=int, default=None, help='Override trials per suite'),
        }
        for name, help_text in (('run', 'Run experiment suites'),
                                ('timing', 'Per-cycle wall time study'),
                                ('memory', 'Dataset vs policy memory accounting'),
                                ('plot', 'Render SVG charts from result tables')):
            sub = subparsers.add_parser(name, help=help_text)
            for flag, kwargs in common.items():
                sub.add_argument(flag, **kwargs)
            sub.add_argument('--suite', action='append', default=None,
                             help='Suite name to run (repeatable; default depends on the subcommand)')
            if name == 'run':
                sub.add_argument('--outcome-override', default=None,
                                 help='JSON file mapping "trial:cycle" to an outcome')
                sub.add_argument('--export-rollouts', action='store_true',
                                 help='Also write every rollout to <suite>_<variant>_rollouts.csv')
            if name == 'plot':
                sub.add_argument('--input', default=None, help='Directory holding result tables')
                sub.add_argument('--mask-task', default='simple', help='Task whose consensus mask is drawn')

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        storage = ResultsStorageService(options['output_dir'])
        workers = options['workers'] or get_setting('WORKERS')
        handler = getattr(self, f"handle_{subcommand}")
        try:
            handler(storage, workers, options)
        except NegativeFeedbackError as e:
            raise CommandError(str(e)) from e

    def _suites(self, options, default_names=None):
        suites = load_suites(options['suite_file'])
        names = options['suite'] or default_names or list(suites)
        missing = [n for n in names if n not in suites]
        if missing:
            raise CommandError(f"Unknown suite(s): {', '.join(missing)}; known: {', '.join(suites)}")
        return [suites[n].with_overrides(seed=options['seed'], trials=options['trials']) for n in names]

    def _start_run(self, suite, command, storage, options):
        try:
            run = SuiteRun.objects.create(suite=suite, command=command, seed=options['seed'],
                                          trials=options['trials'], output_dir=storage.storage_dir)
            run.mark_running()
            return run
        except DatabaseError as e:
            logger.warning(f"Run bookkeeping unavailable: {e}")
            return None

    def _finish_run(self, run, completed, failed, error=''):
        if run is None:
            return
        try:
            run.mark_finished(completed, failed, error)
        except DatabaseError as e:
            logger.warning(f"Could not update run bookkeeping: {e}")

    def handle_run(self, storage, workers, options):
        overrides = load_outcome_overrides(options['outcome_override']) if options['outcome_override'] else None
        failed_suites = []
        for suite in self._suites(options):
            self.stdout.write(f'Running suite {suite.name} ({len(suite.variants)} variants, {suite.trials} trials)...')
            run = self._start_run(suite.name, 'run', storage, options)
            try:
                result = run_suite(suite, storage, workers, overrides, options['export_rollouts'])
            except NegativeFeedbackError as e:
                self._finish_run(run, 0, len(suite.variants), str(e))
                raise
            self._finish_run(run, len(suite.variants) - len(result.failures), len(result.failures),
                             '; '.join(f"{k}: {v}" for k, v in result.failures.items()))
            for variant, error in result.failures.items():
                self.stdout.write(self.style.ERROR(f'  {variant} failed: {error}'))
                failed_suites.append(suite.name)
            if not result.summary.empty:
                final = result.summary.groupby('variant', sort=False)['success_rate'].last()
                for variant, rate in final.items():
                    self.stdout.write(f'  {variant}: final success rate {rate:.2f}')
            self.stdout.write(self.style.SUCCESS(f'Wrote {", ".join(os.path.basename(p) for p in result.paths)}'))
        if failed_suites:
            raise CommandError(f"Variant failures in: {', '.join(sorted(set(failed_suites)))}")

    def _write_timing(self, suite, storage, history_sets):
        report = timing_report(history_sets)
        storage.write_table(report, f"{suite.name}_timing.csv")
        storage.write_table(pd.concat([history_frame(h, m) for m, h in history_sets.items()], ignore_index=True),
                            f"{suite.name}_timing_history.csv")
        return report

    def handle_timing(self, storage, workers, options):
        for suite in self._suites(options, ['efficiency']):
            self.stdout.write(f'Timing suite {suite.name} over {suite.trials} runs...')
            run = self._start_run(suite.name, 'timing', storage, options)
            history_sets = {}
            try:
                run_timing_study(suite, workers, history_sets)
            except NegativeFeedbackError as e:
                if history_sets:
                    self._write_timing(suite, storage, history_sets)
                self._finish_run(run, len(history_sets), len(suite.variants) - len(history_sets), str(e))
                raise
            report = self._write_timing(suite, storage, history_sets)
            for check, holds in timing_structure(report).items():
                style = self.style.SUCCESS if holds else self.style.WARNING
                self.stdout.write(style(f'  {check}: {"yes" if holds else "no"}'))
            self._finish_run(run, len(suite.variants), 0)

    def handle_memory(self, storage, workers, options):
        for suite in self._suites(options, ['memory']):
            run = self._start_run(suite.name, 'memory', storage, options)
            frames = []
            try:
                task = suite.build_task()
                for config in suite.variants:
                    report = memory_report(config, task)
                    frames.append(report.to_frame().assign(variant=config.name))
                    self.stdout.write(f'  {config.name}: dataset {report.dataset_bytes} B, '
                                      f'policy+mask {report.poe_bytes} B '
                                      f'(reference {report.reference_dataset_bytes} B vs {report.reference_poe_bytes} B)')
                    style = self.style.SUCCESS if report.poe_size_independent_of_demos else self.style.WARNING
                    self.stdout.write(style(f'  policy+mask size independent of demo count: '
                                            f'{report.poe_size_independent_of_demos}'))
            except NegativeFeedbackError as e:
                if frames:
                    storage.write_table(pd.concat(frames, ignore_index=True), f"{suite.name}_memory.csv")
                self._finish_run(run, len(frames), len(suite.variants) - len(frames), str(e))
                raise
            storage.write_table(pd.concat(frames, ignore_index=True), f"{suite.name}_memory.csv")
            self._finish_run(run, len(suite.variants), 0)

    def handle_plot(self, storage, workers, options):
        run = self._start_run('charts', 'plot', storage, options)
        try:
            paths = self._plot(storage, options)
        except (NegativeFeedbackError, OSError) as e:
            self._finish_run(run, 0, 1, str(e))
            raise
        self._finish_run(run, len(paths), 0)
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(paths)} charts to {storage.storage_dir}'))

    def _plot(self, storage, options):
        source = ResultsStorageService(options['input']) if options['input'] else storage
        tables = {}
        for filename in sorted(os.listdir(source.storage_dir)):
            if filename.endswith('_summary.csv') or filename.endswith('_timing.csv'):
                tables[filename[:-len('.csv')]] = source.read_table(filename)
        paths = plot_emit(tables, storage.storage_dir)

        task = make_task(options['mask_task'])
        config = FeedbackConfig(seed=options['seed'] if options['seed'] is not None else get_setting('SEED'),
                                n_demos=2 * task.ambiguity)
        demos = select_demos(config, task, config.seed)
        mask = build_mask(demos, task.grid_spec().spatial(), config.mask_threshold)
        storage.write_text(mask.to_text(), f"mask_{task.name}.txt")
        paths.append(plot_mask(mask, storage.path_for(f"mask_{task.name}.svg"), task.obstacles,
                               [demo.positions for demo in demos]))
        return paths
