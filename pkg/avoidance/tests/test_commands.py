import json
import os
import tempfile
from io import StringIO
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from avoidance.exceptions import AllMassNegative, InvalidConfig
from avoidance.feedback import run_trials
from avoidance.management.commands.bench import load_outcome_overrides
from avoidance.models import SuiteRun
from avoidance.results_storage_service import ResultsStorageService
from avoidance.trajectory import OutcomeKind

TINY_SUITES = {
    'suite_version': 1,
    'suites': [
        {
            'name': 'tiny',
            'task': 'simple',
            'trials': 2,
            'defaults': {'max_cycles': 1, 'grid_cells': [10, 10, 10], 'k_positive': 3, 'k_avoid': 2,
                         'pool_size': 3, 'stop_on_success': False},
            'variants': [
                {'name': 'poe', 'method': 'poe'},
                {'name': 'neg_weight', 'method': 'neg_weight', 'neg_weight': -0.1, 'selector': 'central'},
            ],
        },
        {
            'name': 'tiny_memory',
            'task': 'simple',
            'trials': 1,
            'defaults': {'n_demos': 2, 'pool_size': 4},
            'variants': [{'name': 'two_demos'}],
        },
    ],
}


class BenchCommandTests(TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        self.suite_file = os.path.join(self.tmp, 'suites.json')
        with open(self.suite_file, 'w') as f:
            json.dump(TINY_SUITES, f)
        self.output_dir = os.path.join(self.tmp, 'results')

    def tearDown(self):
        self._tmp.cleanup()

    def bench(self, *args):
        out = StringIO()
        call_command('bench', *args, '--suite-file', self.suite_file, '--output-dir', self.output_dir, stdout=out)
        return out.getvalue()

    def test_run_writes_tables_and_records_the_run(self):
        output = self.bench('run', '--suite', 'tiny')
        self.assertIn('Wrote tiny_history.csv, tiny_summary.csv', output)
        summary = ResultsStorageService(self.output_dir).read_table('tiny_summary.csv')
        self.assertEqual(summary['variant'].unique().tolist(), ['poe', 'neg_weight'])
        run = SuiteRun.objects.get(suite='tiny')
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.variants_completed, 2)
        self.assertIsNotNone(run.completed_at)

    def test_outcome_overrides_reach_the_loop(self):
        overrides = os.path.join(self.tmp, 'overrides.json')
        with open(overrides, 'w') as f:
            json.dump({'0:0': 'Success', '0:1': 'Success', '1:0': 'Collision', '1:1': 'Collision'}, f)
        self.bench('run', '--suite', 'tiny', '--outcome-override', overrides)
        history = ResultsStorageService(self.output_dir).read_table('tiny_history.csv')
        poe = history[history['variant'] == 'poe']
        self.assertEqual(poe['outcome'].tolist(), ['Success', 'Success', 'Collision', 'Collision'])

    def test_seed_override_is_recorded(self):
        self.bench('run', '--suite', 'tiny', '--seed', '7', '--trials', '1')
        run = SuiteRun.objects.get(suite='tiny')
        self.assertEqual((run.seed, run.trials), (7, 1))

    def test_timing(self):
        output = self.bench('timing', '--suite', 'tiny')
        self.assertIn('Timing suite tiny', output)
        report = ResultsStorageService(self.output_dir).read_table('tiny_timing.csv')
        self.assertEqual(report['method'].unique().tolist(), ['poe', 'neg_weight'])
        self.assertEqual(report['cycle'].tolist(), [1, 1])

    def test_memory(self):
        output = self.bench('memory', '--suite', 'tiny_memory')
        self.assertIn('policy+mask size independent of demo count: True', output)
        table = ResultsStorageService(self.output_dir).read_table('tiny_memory_memory.csv')
        self.assertEqual(table['demos'].tolist(), [2, 4, 2, 4])

    def test_plot_after_run(self):
        self.bench('run', '--suite', 'tiny')
        output = self.bench('plot')
        self.assertIn('Wrote 2 charts', output)
        for name in ('tiny_summary.svg', 'mask_simple.svg', 'mask_simple.txt'):
            self.assertTrue(os.path.exists(os.path.join(self.output_dir, name)), name)
        plot = SuiteRun.objects.get(command='plot')
        self.assertEqual(plot.status, 'completed')
        self.assertEqual(plot.variants_completed, 2)

    def test_timing_failure_marks_run_failed_and_keeps_finished_variants(self):
        def fail_after_first(suite, workers, results):
            config = suite.variants[0]
            results[config.name] = run_trials(config, suite.build_task(), suite.trials, workers)
            raise AllMassNegative('refit collapsed')

        with mock.patch('avoidance.management.commands.bench.run_timing_study', side_effect=fail_after_first):
            with self.assertRaises(CommandError):
                self.bench('timing', '--suite', 'tiny')
        run = SuiteRun.objects.get(suite='tiny', command='timing')
        self.assertEqual(run.status, 'failed')
        self.assertEqual((run.variants_completed, run.variants_failed), (1, 1))
        self.assertIn('refit collapsed', run.error_message)
        report = ResultsStorageService(self.output_dir).read_table('tiny_timing.csv')
        self.assertEqual(report['method'].unique().tolist(), ['poe'])

    def test_memory_failure_marks_run_failed(self):
        with mock.patch('avoidance.management.commands.bench.memory_report',
                        side_effect=InvalidConfig('pool too small')):
            with self.assertRaises(CommandError):
                self.bench('memory', '--suite', 'tiny_memory')
        run = SuiteRun.objects.get(suite='tiny_memory', command='memory')
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.variants_failed, 1)
        self.assertIn('pool too small', run.error_message)
        self.assertFalse(os.path.exists(os.path.join(self.output_dir, 'tiny_memory_memory.csv')))

    def test_unknown_suite(self):
        with self.assertRaises(CommandError):
            self.bench('run', '--suite', 'nope')

    def test_bad_override_file(self):
        overrides = os.path.join(self.tmp, 'overrides.json')
        with open(overrides, 'w') as f:
            json.dump({'first': 'Success'}, f)
        with self.assertRaises(CommandError):
            self.bench('run', '--suite', 'tiny', '--outcome-override', overrides)


class OverrideFileTests(TestCase):
    def test_parses_trial_and_cycle(self):
        with tempfile.NamedTemporaryFile('w', suffix='.json', delete=False) as f:
            json.dump({'0:2': 'Success', '3:0': 'GoalMiss'}, f)
        try:
            self.assertEqual(load_outcome_overrides(f.name),
                             {0: {2: OutcomeKind.SUCCESS}, 3: {0: OutcomeKind.GOAL_MISS}})
        finally:
            os.unlink(f.name)

    def test_rejects_unevaluated(self):
        with tempfile.NamedTemporaryFile('w', suffix='.json', delete=False) as f:
            json.dump({'0:0': 'Unevaluated'}, f)
        try:
            with self.assertRaises(InvalidConfig):
                load_outcome_overrides(f.name)
        finally:
            os.unlink(f.name)


class SuiteRunModelTests(TestCase):
    def test_lifecycle(self):
        run = SuiteRun.objects.create(suite='simple_methods', command='run')
        self.assertEqual(run.status, 'pending')
        run.mark_running()
        self.assertEqual(run.status, 'running')
        run.mark_finished(2, 1, 'moe: dead end')
        run.refresh_from_db()
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.variants_failed, 1)
        self.assertIn('simple_methods run - failed', str(run))
